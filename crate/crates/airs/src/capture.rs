//! Packet-record capture: the on-disk capture format, synthetic traffic
//! generation, attack injection, and the monitor's flush policy.

use std::fmt;
use std::fs;
use std::io;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::defaults;

/// Magic first line of every capture file.
pub const CAPTURE_MAGIC: &str = "airscap v1";

/// Timestamp origin for generated traffic, microseconds since epoch.
const BASE_TIMESTAMP_US: u64 = 1_600_000_000_000_000;

/// Nominal inter-packet gap for generated traffic, in microseconds.
const PACKET_GAP_US: u64 = 100;

/// Upper bound (exclusive) on seeded per-packet jitter, in microseconds.
const JITTER_US: u64 = 50;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid traffic spec: {0}")]
    InvalidSpec(String),
    #[error("no default signature for attack `{0}`")]
    UnknownAttack(String),
    #[error("cannot fit {attacks} attack runs ({needed} packets) into a {packets}-packet dataset")]
    InfeasibleCounts {
        packets: u64,
        attacks: u64,
        needed: u64,
    },
}

/// Transport protocol of a captured packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Tcp,
    Udp,
    Icmp,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
            Protocol::Icmp => "ICMP",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TCP" => Ok(Protocol::Tcp),
            "UDP" => Ok(Protocol::Udp),
            "ICMP" => Ok(Protocol::Icmp),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// TCP flag set. Empty for non-TCP packets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct TcpFlags(u8);

impl TcpFlags {
    pub const EMPTY: TcpFlags = TcpFlags(0);
    pub const SYN: TcpFlags = TcpFlags(1);
    pub const ACK: TcpFlags = TcpFlags(1 << 1);
    pub const FIN: TcpFlags = TcpFlags(1 << 2);
    pub const RST: TcpFlags = TcpFlags(1 << 3);
    pub const PSH: TcpFlags = TcpFlags(1 << 4);

    const NAMES: [(TcpFlags, &'static str); 5] = [
        (TcpFlags::SYN, "SYN"),
        (TcpFlags::ACK, "ACK"),
        (TcpFlags::FIN, "FIN"),
        (TcpFlags::RST, "RST"),
        (TcpFlags::PSH, "PSH"),
    ];

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn contains(&self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;

    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | rhs.0)
    }
}

/// Canonical rendering: flag names joined by commas, `-` when empty.
impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        let mut first = true;
        for (flag, name) in TcpFlags::NAMES {
            if self.contains(flag) {
                if !first {
                    f.write_str(",")?;
                }
                f.write_str(name)?;
                first = false;
            }
        }
        Ok(())
    }
}

impl FromStr for TcpFlags {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "-" {
            return Ok(TcpFlags::EMPTY);
        }
        let mut flags = TcpFlags::EMPTY;
        for part in s.split(',') {
            let flag = TcpFlags::NAMES
                .iter()
                .find(|(_, name)| *name == part)
                .map(|(flag, _)| *flag)
                .ok_or_else(|| format!("unknown TCP flag `{part}`"))?;
            flags = flags | flag;
        }
        Ok(flags)
    }
}

/// One captured network packet; the unit of detection.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PacketRecord {
    pub timestamp_us: u64,
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub flags: TcpFlags,
    pub seq: u32,
    pub payload: Vec<u8>,
}

impl PacketRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.protocol != Protocol::Tcp && !self.flags.is_empty() {
            return Err(format!(
                "{} packet carries TCP flags {}",
                self.protocol, self.flags
            ));
        }
        Ok(())
    }

    /// One capture-file line, without the trailing newline.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.timestamp_us,
            self.src_ip,
            self.src_port,
            self.dst_ip,
            self.dst_port,
            self.protocol,
            self.flags,
            self.seq,
            BASE64.encode(&self.payload)
        )
    }

    /// Serialized size in bytes, newline included.
    pub fn encoded_len(&self) -> u64 {
        self.to_line().len() as u64 + 1
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 9 {
            return Err(format!("expected 9 fields, found {}", fields.len()));
        }
        let record = PacketRecord {
            timestamp_us: fields[0]
                .parse()
                .map_err(|_| format!("bad timestamp `{}`", fields[0]))?,
            src_ip: fields[1]
                .parse()
                .map_err(|_| format!("bad source ip `{}`", fields[1]))?,
            src_port: fields[2]
                .parse()
                .map_err(|_| format!("source port out of range `{}`", fields[2]))?,
            dst_ip: fields[3]
                .parse()
                .map_err(|_| format!("bad destination ip `{}`", fields[3]))?,
            dst_port: fields[4]
                .parse()
                .map_err(|_| format!("destination port out of range `{}`", fields[4]))?,
            protocol: fields[5].parse()?,
            flags: fields[6].parse()?,
            seq: fields[7]
                .parse()
                .map_err(|_| format!("bad sequence number `{}`", fields[7]))?,
            payload: BASE64
                .decode(fields[8])
                .map_err(|_| format!("bad payload encoding `{}`", fields[8]))?,
        };
        record.validate()?;
        Ok(record)
    }
}

/// The monitor's flush criteria: elapsed time and buffered data volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlushPolicy {
    pub max_elapsed: Duration,
    pub max_volume: u64,
}

impl FlushPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_elapsed.is_zero() {
            return Err("max_elapsed must be positive".into());
        }
        if self.max_volume == 0 {
            return Err("max_volume must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlushDecision {
    Hold,
    Flush,
}

/// Buffer the monitor fills between flushes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaptureBuffer {
    pub records: Vec<PacketRecord>,
    pub opened_at_us: u64,
    pub bytes: u64,
}

impl CaptureBuffer {
    pub fn new(opened_at_us: u64) -> Self {
        CaptureBuffer {
            records: Vec::new(),
            opened_at_us,
            bytes: 0,
        }
    }

    pub fn push(&mut self, record: PacketRecord) {
        self.bytes += record.encoded_len();
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Flush iff the buffer is old enough or large enough.
pub fn monitor_flush(buffer: &CaptureBuffer, policy: &FlushPolicy, now_us: u64) -> FlushDecision {
    let elapsed_us = now_us.saturating_sub(buffer.opened_at_us);
    if elapsed_us >= policy.max_elapsed.as_micros() as u64 || buffer.bytes >= policy.max_volume {
        FlushDecision::Flush
    } else {
        FlushDecision::Hold
    }
}

/// One attack run to inject: (attacker, attack, repetitions).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackRun {
    pub attacker_ip: Ipv4Addr,
    pub attack_id: String,
    pub repetitions: u64,
}

/// Shape of a synthetic dataset: legitimate background plus attack runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficSpec {
    pub legit_packet_count: u64,
    pub legit_hosts: Vec<Ipv4Addr>,
    pub target_ip: Ipv4Addr,
    pub attack_runs: Vec<AttackRun>,
    pub seed: u64,
}

impl TrafficSpec {
    pub fn validate(&self) -> Result<(), CaptureError> {
        if self.legit_packet_count > 0 && self.legit_hosts.is_empty() {
            return Err(CaptureError::InvalidSpec(
                "legit_packet_count > 0 requires at least one legit host".into(),
            ));
        }
        for run in &self.attack_runs {
            if run.repetitions == 0 {
                return Err(CaptureError::InvalidSpec(format!(
                    "attack run from {} has repetitions = 0",
                    run.attacker_ip
                )));
            }
        }
        Ok(())
    }
}

pub fn write_capture(records: &[PacketRecord], path: &Path) -> Result<(), CaptureError> {
    let mut out = String::with_capacity(records.len() * 96 + CAPTURE_MAGIC.len() + 1);
    out.push_str(CAPTURE_MAGIC);
    out.push('\n');
    for (i, record) in records.iter().enumerate() {
        record
            .validate()
            .map_err(|message| CaptureError::Malformed {
                path: path.to_path_buf(),
                line: i + 2,
                message,
            })?;
        out.push_str(&record.to_line());
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| CaptureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_capture(path: &Path) -> Result<Vec<PacketRecord>, CaptureError> {
    let text = fs::read_to_string(path).map_err(|source| CaptureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == CAPTURE_MAGIC => {}
        Some((_, first)) => {
            return Err(CaptureError::Malformed {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected `{CAPTURE_MAGIC}` header, found `{first}`"),
            })
        }
        None => {
            return Err(CaptureError::Malformed {
                path: path.to_path_buf(),
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let record = PacketRecord::parse_line(line).map_err(|message| CaptureError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Benign payload pool for legitimate traffic. Kept disjoint from every
/// default signature marker so generated background never raises alerts.
pub(crate) const BENIGN_PAYLOADS: &[&[u8]] = &[
    b"GET /index.html HTTP/1.1\r\nHost: intranet\r\n\r\n",
    b"GET /status HTTP/1.1\r\nHost: intranet\r\n\r\n",
    b"POST /api/v1/heartbeat HTTP/1.1\r\nContent-Length: 2\r\n\r\nok",
    b"session keepalive",
    b"periodic inventory sync",
    b"metrics push cpu=0.42 mem=0.67",
    b"",
];

fn benign_payload(rng: &mut ChaCha8Rng) -> Vec<u8> {
    BENIGN_PAYLOADS[rng.gen_range(0..BENIGN_PAYLOADS.len())].to_vec()
}

fn next_timestamp(ts: &mut u64, rng: &mut ChaCha8Rng) -> u64 {
    *ts += PACKET_GAP_US + rng.gen_range(0..JITTER_US);
    *ts
}

fn legit_record(spec: &TrafficSpec, ts: u64, rng: &mut ChaCha8Rng) -> PacketRecord {
    let src_ip = spec.legit_hosts[rng.gen_range(0..spec.legit_hosts.len())];
    match rng.gen_range(0..10u32) {
        0..=6 => PacketRecord {
            timestamp_us: ts,
            src_ip,
            src_port: rng.gen_range(1024..=65535),
            dst_ip: spec.target_ip,
            dst_port: [80u16, 443, 8080][rng.gen_range(0..3)],
            protocol: Protocol::Tcp,
            flags: if rng.gen_bool(0.5) {
                TcpFlags::ACK
            } else {
                TcpFlags::ACK | TcpFlags::PSH
            },
            seq: rng.gen(),
            payload: benign_payload(rng),
        },
        7..=8 => PacketRecord {
            timestamp_us: ts,
            src_ip,
            src_port: rng.gen_range(1024..=65535),
            dst_ip: spec.target_ip,
            dst_port: 53,
            protocol: Protocol::Udp,
            flags: TcpFlags::EMPTY,
            seq: 0,
            payload: benign_payload(rng),
        },
        _ => PacketRecord {
            timestamp_us: ts,
            src_ip,
            src_port: 0,
            dst_ip: spec.target_ip,
            dst_port: 0,
            protocol: Protocol::Icmp,
            flags: TcpFlags::EMPTY,
            seq: rng.gen_range(0..u32::from(u16::MAX)),
            payload: Vec::new(),
        },
    }
}

/// Deterministic legitimate background traffic: exactly
/// `spec.legit_packet_count` records, strictly increasing timestamps,
/// payloads drawn from the benign pool.
pub fn generate_legit_traffic(spec: &TrafficSpec) -> Result<Vec<PacketRecord>, CaptureError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ts = BASE_TIMESTAMP_US;
    let mut records = Vec::with_capacity(spec.legit_packet_count as usize);
    for _ in 0..spec.legit_packet_count {
        let stamp = next_timestamp(&mut ts, &mut rng);
        records.push(legit_record(spec, stamp, &mut rng));
    }
    Ok(records)
}

/// Request payload an attack run sends: an HTTP GET line with the signature
/// marker appended after the header block.
pub fn attack_payload(target_ip: Ipv4Addr, marker: &[u8]) -> Vec<u8> {
    let mut payload = format!("GET / HTTP/1.0\r\nHOST: {target_ip}\r\n\r").into_bytes();
    payload.extend_from_slice(marker);
    payload.push(b'\n');
    payload
}

/// One injected run: a SYN, its ACK, then 100 marker-bearing payload packets.
pub const PACKETS_PER_RUN: u64 = 102;
const PAYLOAD_PACKETS_PER_RUN: u64 = 100;

fn attack_run_records(
    attacker_ip: Ipv4Addr,
    target_ip: Ipv4Addr,
    marker: &[u8],
    ts: &mut u64,
    rng: &mut ChaCha8Rng,
) -> Vec<PacketRecord> {
    let src_port: u16 = rng.gen_range(1024..=65535);
    let seq: u32 = rng.gen();
    let mut records = Vec::with_capacity(PACKETS_PER_RUN as usize);
    let base = PacketRecord {
        timestamp_us: next_timestamp(ts, rng),
        src_ip: attacker_ip,
        src_port,
        dst_ip: target_ip,
        dst_port: 80,
        protocol: Protocol::Tcp,
        flags: TcpFlags::SYN,
        seq,
        payload: Vec::new(),
    };
    records.push(base.clone());
    records.push(PacketRecord {
        timestamp_us: next_timestamp(ts, rng),
        flags: TcpFlags::ACK,
        seq: seq.wrapping_add(1),
        ..base.clone()
    });
    let payload = attack_payload(target_ip, marker);
    for _ in 0..PAYLOAD_PACKETS_PER_RUN {
        records.push(PacketRecord {
            timestamp_us: next_timestamp(ts, rng),
            flags: TcpFlags::ACK,
            seq: seq.wrapping_add(1),
            payload: payload.clone(),
            ..base.clone()
        });
    }
    records
}

/// Appends `repetitions` attack runs against `target_ip` and re-sorts the
/// result by timestamp. Injected runs start at a seeded point inside the
/// existing capture so attack and background traffic interleave.
pub fn inject_attack(
    records: Vec<PacketRecord>,
    attacker_ip: Ipv4Addr,
    target_ip: Ipv4Addr,
    attack_id: &str,
    repetitions: u64,
    seed: u64,
) -> Result<Vec<PacketRecord>, CaptureError> {
    if repetitions == 0 {
        return Err(CaptureError::InvalidSpec("repetitions must be >= 1".into()));
    }
    let marker = defaults::signature_marker(attack_id)
        .ok_or_else(|| CaptureError::UnknownAttack(attack_id.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts = start_timestamp(&records, &mut rng);
    let mut out = records;
    for _ in 0..repetitions {
        out.extend(attack_run_records(
            attacker_ip,
            target_ip,
            &marker,
            &mut ts,
            &mut rng,
        ));
    }
    out.sort_by_key(|r| r.timestamp_us);
    Ok(out)
}

fn start_timestamp(records: &[PacketRecord], rng: &mut ChaCha8Rng) -> u64 {
    match records.iter().map(|r| r.timestamp_us).min() {
        Some(min) => {
            let max = records.iter().map(|r| r.timestamp_us).max().unwrap();
            if min == max {
                min
            } else {
                rng.gen_range(min..max)
            }
        }
        None => BASE_TIMESTAMP_US,
    }
}

/// Full convenience generator: legitimate background plus every attack run
/// in the spec, merged in timestamp order.
pub fn generate_traffic(spec: &TrafficSpec) -> Result<Vec<PacketRecord>, CaptureError> {
    spec.validate()?;
    let mut records = generate_legit_traffic(spec)?;
    for (i, run) in spec.attack_runs.iter().enumerate() {
        records = inject_attack(
            records,
            run.attacker_ip,
            spec.target_ip,
            &run.attack_id,
            run.repetitions,
            spec.seed.wrapping_add(i as u64 + 1),
        )?;
    }
    Ok(records)
}

/// Generates a dataset with exactly `packets` records of which
/// `attacks * 102` belong to injected runs, each run from a distinct source.
pub fn scale_dataset(
    packets: u64,
    attacks: u64,
    seed: u64,
) -> Result<Vec<PacketRecord>, CaptureError> {
    let needed = attacks
        .checked_mul(PACKETS_PER_RUN)
        .filter(|needed| *needed <= packets)
        .ok_or(CaptureError::InfeasibleCounts {
            packets,
            attacks,
            needed: attacks.saturating_mul(PACKETS_PER_RUN),
        })?;
    let spec = TrafficSpec {
        legit_packet_count: packets - needed,
        legit_hosts: defaults::legit_host_pool(),
        target_ip: defaults::DEFAULT_TARGET_IP,
        attack_runs: Vec::new(),
        seed,
    };
    let mut records = generate_legit_traffic(&spec)?;
    let attack_ids = defaults::default_attack_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5ca1e));
    // legit records come out in timestamp order, so the span is first..last
    let (span_start, mut span_end) = match (records.first(), records.last()) {
        (Some(first), Some(last)) => (first.timestamp_us, last.timestamp_us),
        _ => (BASE_TIMESTAMP_US, BASE_TIMESTAMP_US),
    };
    for i in 0..attacks {
        let attacker_ip = run_source_ip(i);
        let attack_id = &attack_ids[(i % attack_ids.len() as u64) as usize];
        let marker = defaults::signature_marker(attack_id)
            .ok_or_else(|| CaptureError::UnknownAttack(attack_id.clone()))?;
        let mut ts = if span_start == span_end {
            span_start
        } else {
            rng.gen_range(span_start..span_end)
        };
        records.extend(attack_run_records(
            attacker_ip,
            spec.target_ip,
            &marker,
            &mut ts,
            &mut rng,
        ));
        span_end = span_end.max(ts);
    }
    records.sort_by_key(|r| r.timestamp_us);
    Ok(records)
}

/// Distinct per-run source so every run reduces to its own aggregate.
fn run_source_ip(run: u64) -> Ipv4Addr {
    Ipv4Addr::new(
        10,
        ((run >> 16) & 0xff) as u8,
        ((run >> 8) & 0xff) as u8,
        (run & 0xff) as u8,
    )
}
