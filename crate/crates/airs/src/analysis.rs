//! Map-reduce detection engine: partitions capture data, maps packets to
//! attack alerts via signature rules, reduces alerts to per-flow aggregates,
//! and merges partial results from parallel workers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::thread;

use thiserror::Error;

use crate::capture::{PacketRecord, Protocol, TcpFlags};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("worker count must be at least 1")]
    ZeroWorkers,
    #[error("signature rule `{0}` has an empty payload pattern")]
    EmptyPattern(String),
}

/// How a signature rule inspects a packet of its protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    /// Payload contains the byte pattern.
    PayloadContains(Vec<u8>),
    /// TCP flag set equals the pattern exactly.
    FlagPattern(TcpFlags),
}

/// A known-attack pattern bound to a protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureRule {
    pub id: String,
    pub attack_id: String,
    pub protocol: Protocol,
    pub matcher: Matcher,
}

impl SignatureRule {
    /// True iff the packet is of this rule's protocol and the matcher hits.
    pub fn matches(&self, packet: &PacketRecord) -> bool {
        if packet.protocol != self.protocol {
            return false;
        }
        match &self.matcher {
            Matcher::PayloadContains(pattern) => contains(&packet.payload, pattern),
            Matcher::FlagPattern(flags) => packet.flags == *flags,
        }
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

pub fn validate_rules(rules: &[SignatureRule]) -> Result<(), AnalysisError> {
    for rule in rules {
        if let Matcher::PayloadContains(pattern) = &rule.matcher {
            if pattern.is_empty() {
                return Err(AnalysisError::EmptyPattern(rule.id.clone()));
            }
        }
    }
    Ok(())
}

/// One detection hit: which flow triggered which signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackAlert {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub protocol: Protocol,
    pub attack_id: String,
    pub signature_id: String,
}

/// Reduced detection result for one (source, destination, protocol, attack)
/// flow, with the number of matching packets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackAggregate {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub protocol: Protocol,
    pub signature_id: String,
    pub attack_id: String,
    pub quantity: u64,
}

type AggregateKey = (Ipv4Addr, Ipv4Addr, Protocol, String);

fn key_of(alert: &AttackAlert) -> AggregateKey {
    (
        alert.src_ip,
        alert.dst_ip,
        alert.protocol,
        alert.attack_id.clone(),
    )
}

/// A contiguous, order-preserving slice of the input capture.
#[derive(Debug, Clone, Copy)]
pub struct Partition<'a> {
    pub index: usize,
    pub records: &'a [PacketRecord],
}

/// Splits records into at most `n` contiguous partitions with sizes
/// differing by at most one. Returns fewer partitions when there are fewer
/// records than workers; empty partitions are never emitted.
pub fn partition(records: &[PacketRecord], n: usize) -> Result<Vec<Partition<'_>>, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::ZeroWorkers);
    }
    let len = records.len();
    let base = len / n;
    let remainder = len % n;
    let mut partitions = Vec::new();
    let mut start = 0;
    for i in 0..n {
        let size = base + usize::from(i < remainder);
        if size == 0 {
            break;
        }
        partitions.push(Partition {
            index: partitions.len(),
            records: &records[start..start + size],
        });
        start += size;
    }
    Ok(partitions)
}

/// Map phase: groups rules by protocol, then tests each packet against only
/// the rules of its protocol, in declaration order. First matching rule wins;
/// at most one alert per packet.
pub fn map_detect(records: &[PacketRecord], rules: &[SignatureRule]) -> Vec<AttackAlert> {
    let mut by_protocol: BTreeMap<Protocol, Vec<&SignatureRule>> = BTreeMap::new();
    for rule in rules {
        by_protocol.entry(rule.protocol).or_default().push(rule);
    }
    let mut alerts = Vec::new();
    for packet in records {
        let Some(candidates) = by_protocol.get(&packet.protocol) else {
            continue;
        };
        if let Some(rule) = candidates.iter().find(|rule| rule.matches(packet)) {
            alerts.push(AttackAlert {
                src_ip: packet.src_ip,
                dst_ip: packet.dst_ip,
                protocol: packet.protocol,
                attack_id: rule.attack_id.clone(),
                signature_id: rule.id.clone(),
            });
        }
    }
    alerts
}

/// Reduce phase: groups alerts by (source, destination, protocol, attack),
/// counting group size. The aggregate carries the smallest signature id seen
/// in its group, which keeps merging order-independent.
pub fn reduce_alerts(alerts: &[AttackAlert]) -> Vec<AttackAggregate> {
    let mut groups: BTreeMap<AggregateKey, (String, u64)> = BTreeMap::new();
    for alert in alerts {
        groups
            .entry(key_of(alert))
            .and_modify(|(sig, quantity)| {
                if alert.signature_id < *sig {
                    *sig = alert.signature_id.clone();
                }
                *quantity += 1;
            })
            .or_insert_with(|| (alert.signature_id.clone(), 1));
    }
    into_aggregates(groups)
}

fn into_aggregates(groups: BTreeMap<AggregateKey, (String, u64)>) -> Vec<AttackAggregate> {
    groups
        .into_iter()
        .map(
            |((src_ip, dst_ip, protocol, attack_id), (signature_id, quantity))| AttackAggregate {
                src_ip,
                dst_ip,
                protocol,
                signature_id,
                attack_id,
                quantity,
            },
        )
        .collect()
}

/// Combines two aggregate sets: union of keys, quantities summed on
/// collision. Associative and commutative with the empty set as identity.
pub fn merge_aggregates(a: &[AttackAggregate], b: &[AttackAggregate]) -> Vec<AttackAggregate> {
    let mut groups: BTreeMap<AggregateKey, (String, u64)> = BTreeMap::new();
    for aggregate in a.iter().chain(b) {
        let key = (
            aggregate.src_ip,
            aggregate.dst_ip,
            aggregate.protocol,
            aggregate.attack_id.clone(),
        );
        groups
            .entry(key)
            .and_modify(|(sig, quantity)| {
                if aggregate.signature_id < *sig {
                    *sig = aggregate.signature_id.clone();
                }
                *quantity += aggregate.quantity;
            })
            .or_insert_with(|| (aggregate.signature_id.clone(), aggregate.quantity));
    }
    into_aggregates(groups)
}

/// Whole pipeline: partition, map each partition on its own worker thread,
/// reduce per partition, then merge. The output is independent of the worker
/// count.
pub fn run_analysis(
    records: &[PacketRecord],
    rules: &[SignatureRule],
    workers: usize,
) -> Result<Vec<AttackAggregate>, AnalysisError> {
    validate_rules(rules)?;
    let partitions = partition(records, workers)?;
    let partials: Vec<Vec<AttackAggregate>> = thread::scope(|scope| {
        let handles: Vec<_> = partitions
            .iter()
            .map(|part| scope.spawn(move || reduce_alerts(&map_detect(part.records, rules))))
            .collect();
        handles
            .into_iter()
            .map(|handle| handle.join().expect("analysis worker panicked"))
            .collect()
    });
    Ok(partials
        .iter()
        .fold(Vec::new(), |acc, part| merge_aggregates(&acc, part)))
}

/// Human-readable aggregate report.
pub fn render_aggregate_table(aggregates: &[AttackAggregate]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<4} {:<16} {:<16} {:<8} {:>8}",
        "#", "Source IP", "Destination IP", "Attack", "Quantity"
    );
    for (i, aggregate) in aggregates.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<4} {:<16} {:<16} {:<8} {:>8}",
            i + 1,
            aggregate.src_ip,
            aggregate.dst_ip,
            aggregate.attack_id,
            aggregate.quantity
        );
    }
    out
}

/// Machine-readable aggregate lines:
/// `src\tdst\tprotocol\tsignature\tattack\tquantity`.
pub fn aggregate_machine_lines(aggregates: &[AttackAggregate]) -> String {
    let mut out = String::new();
    for aggregate in aggregates {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            aggregate.src_ip,
            aggregate.dst_ip,
            aggregate.protocol,
            aggregate.signature_id,
            aggregate.attack_id,
            aggregate.quantity
        );
    }
    out
}
