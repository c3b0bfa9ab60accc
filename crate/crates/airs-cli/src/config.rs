//! Loop configuration files: line-based `key = value` records under
//! `[section]` headers, `#` comments. No external parser involved.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};

use airs::capture::FlushPolicy;
use airs::defaults;
use airs::kb::{load_kb, parse_signature_record};
use airs::simenv::{AttackerNode, LegitSource, LoopConfig};

/// Parsed config plus the driver-level knobs that live outside `LoopConfig`.
pub struct LoopSetup {
    pub config: LoopConfig,
    pub cycles: u64,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
}

#[derive(Default)]
struct RawConfig {
    /// section -> key -> (line, value)
    values: BTreeMap<String, BTreeMap<String, (usize, String)>>,
    /// bare records per section (used by [rules])
    records: BTreeMap<String, Vec<(usize, String)>>,
}

fn parse_raw(text: &str) -> Result<RawConfig> {
    let mut raw = RawConfig::default();
    let mut section: Option<String> = None;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = Some(name.to_string());
            raw.values.entry(name.to_string()).or_default();
            continue;
        }
        let section = section
            .as_ref()
            .ok_or_else(|| anyhow!("line {}: record before any [section]", idx + 1))?;
        match line.split_once('=') {
            Some((key, value)) => {
                raw.values
                    .entry(section.clone())
                    .or_default()
                    .insert(key.trim().to_string(), (idx + 1, value.trim().to_string()));
            }
            None => {
                raw.records
                    .entry(section.clone())
                    .or_default()
                    .push((idx + 1, line.to_string()));
            }
        }
    }
    Ok(raw)
}

impl RawConfig {
    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.values
            .get(section)
            .and_then(|keys| keys.get(key))
            .map(|(_, value)| value.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(value) => {
                let (line, _) = self.values[section][key];
                value
                    .parse::<T>()
                    .map(Some)
                    .map_err(|_| anyhow!("line {line}: bad {section}.{key} value `{value}`"))
            }
        }
    }
}

fn parse_legit_sources(value: &str, line: usize) -> Result<Vec<LegitSource>> {
    value
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|entry| {
            let (ip, rate) = entry
                .split_once(':')
                .ok_or_else(|| anyhow!("line {line}: legit source `{entry}` needs ip:rate"))?;
            Ok(LegitSource {
                ip: ip
                    .parse::<Ipv4Addr>()
                    .map_err(|_| anyhow!("line {line}: bad ip `{ip}`"))?,
                rate: rate
                    .parse()
                    .map_err(|_| anyhow!("line {line}: bad rate `{rate}`"))?,
            })
        })
        .collect()
}

fn parse_attackers(value: &str, line: usize) -> Result<Vec<AttackerNode>> {
    value
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|entry| {
            let parts: Vec<&str> = entry.split(':').collect();
            if parts.len() != 3 {
                bail!("line {line}: attacker `{entry}` needs ip:attack:rate");
            }
            Ok(AttackerNode {
                ip: parts[0]
                    .parse::<Ipv4Addr>()
                    .map_err(|_| anyhow!("line {line}: bad ip `{}`", parts[0]))?,
                attack_id: parts[1].to_string(),
                active: true,
                rate: parts[2]
                    .parse()
                    .map_err(|_| anyhow!("line {line}: bad rate `{}`", parts[2]))?,
            })
        })
        .collect()
}

/// Reads and validates a loop configuration file.
pub fn load_loop_setup(path: &Path) -> Result<LoopSetup> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let raw = parse_raw(&text)?;
    let base_dir = path.parent().unwrap_or(Path::new("."));

    let kb = match raw.get("engine", "kb_path") {
        Some(kb_path) => {
            let resolved = base_dir.join(kb_path);
            load_kb(&resolved)?
        }
        None => defaults::default_kb(),
    };
    let mut config = LoopConfig::new(kb);

    if let Some(workers) = raw.parse::<usize>("engine", "workers")? {
        if workers == 0 {
            bail!("engine.workers must be at least 1");
        }
        config.workers = workers;
    }
    if let Some(secs) = raw.parse::<f64>("flush", "max_elapsed_secs")? {
        if secs <= 0.0 {
            bail!("flush.max_elapsed_secs must be positive");
        }
        config.flush = FlushPolicy {
            max_elapsed: Duration::from_secs_f64(secs),
            ..config.flush
        };
    }
    if let Some(volume) = raw.parse::<u64>("flush", "max_volume_bytes")? {
        config.flush = FlushPolicy {
            max_volume: volume,
            ..config.flush
        };
    }
    if let Some(tick_seconds) = raw.parse::<f64>("simulation", "tick_seconds")? {
        if tick_seconds <= 0.0 {
            bail!("simulation.tick_seconds must be positive");
        }
        config.tick_us = (tick_seconds * 1_000_000.0).round().max(1.0) as u64;
    }
    if let Some(threshold) = raw.parse::<f64>("simulation", "success_threshold")? {
        config.success_threshold = threshold;
    }
    if let Some(window) = raw.parse::<u64>("simulation", "eval_window")? {
        config.eval_window = window;
    }
    if let Some(rate) = raw.parse::<u64>("simulation", "analysis_rate")? {
        config.analysis_rate = rate;
    }
    if let Some(ticks) = raw.parse::<u64>("simulation", "plan_ticks")? {
        config.plan_ticks = ticks;
    }
    if let Some(ticks) = raw.parse::<u64>("simulation", "max_monitor_ticks")? {
        config.max_monitor_ticks = ticks;
    }
    if let Some(ip) = raw.parse::<Ipv4Addr>("traffic", "target_ip")? {
        config.target_ip = ip;
    }
    if let Some(value) = raw.get("traffic", "legit_sources") {
        let (line, _) = raw.values["traffic"]["legit_sources"];
        config.legit_sources = parse_legit_sources(value, line)?;
    }
    if let Some(value) = raw.get("traffic", "attackers") {
        let (line, _) = raw.values["traffic"]["attackers"];
        config.attackers = parse_attackers(value, line)?;
    }
    if let Some(value) = raw.parse::<u64>("effects", "notify_lag")? {
        config.effects.notify_lag = value;
    }
    if let Some(value) = raw.parse::<u64>("effects", "block_lag")? {
        config.effects.block_lag = value;
    }
    if let Some(value) = raw.parse::<u64>("effects", "rate_limit_lag")? {
        config.effects.rate_limit_lag = value;
    }
    if let Some(value) = raw.parse::<u64>("effects", "rate_limit_cap")? {
        config.effects.rate_limit_cap = value;
    }
    if let Some(value) = raw.parse::<u64>("effects", "isolate_lag")? {
        config.effects.isolate_lag = value;
    }
    if let Some(value) = raw.parse::<u64>("effects", "restart_downtime")? {
        config.effects.restart_downtime = value;
    }

    // inline rules replace whatever the knowledge base carried
    if let Some(records) = raw.records.get("rules") {
        let mut rules = Vec::new();
        for (line, record) in records {
            rules.push(parse_signature_record(record).map_err(|e| anyhow!("line {line}: {e}"))?);
        }
        config.kb.signatures = rules;
        config.kb.validate()?;
    }

    let cycles = raw.parse::<u64>("simulation", "cycles")?.unwrap_or(1);
    if cycles == 0 {
        bail!("simulation.cycles must be at least 1");
    }
    let seed = raw.parse::<u64>("engine", "seed")?;
    let output_dir = base_dir.join(raw.get("engine", "output_dir").unwrap_or("."));
    Ok(LoopSetup {
        config,
        cycles,
        seed,
        output_dir,
    })
}
