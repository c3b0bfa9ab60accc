//! Deterministic discrete-tick environment (hosts, attackers, ingress
//! filtering) plus the executor: applies response actions, evaluates their
//! outcomes, feeds results back into the knowledge base, and drives the
//! full monitor/analyze/plan/execute cycle.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analysis::{run_analysis, AnalysisError, AttackAggregate, Matcher};
use crate::capture::{
    attack_payload, monitor_flush, CaptureBuffer, FlushDecision, FlushPolicy, PacketRecord,
    Protocol, TcpFlags, BENIGN_PAYLOADS,
};
use crate::kb::{ActionKind, KbError, KnowledgeBase, OutcomeRecord};
use crate::planner::{select_response, PlannerError, ResponsePlan};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("response plan names no offending traffic")]
    NoOffender,
    #[error("plan selects unknown action `{0}`")]
    UnknownAction(String),
    #[error("no profile for action `{action_id}` against attack `{attack_id}`")]
    MissingProfile {
        action_id: String,
        attack_id: String,
    },
    #[error("`{0}` is not a simulated endpoint")]
    UnknownEndpoint(Ipv4Addr),
    #[error("evaluation window must be at least 1 tick")]
    InvalidWindow,
    #[error("only {elapsed} ticks since the response was applied, {window} needed")]
    WindowNotElapsed { elapsed: u64, window: u64 },
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// A protected service in the simulated network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimHost {
    pub ip: Ipv4Addr,
    pub healthy: bool,
    pub unhealthy_until: Option<u64>,
}

/// An attacking node emitting marker-bearing packets every tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackerNode {
    pub ip: Ipv4Addr,
    pub attack_id: String,
    pub active: bool,
    /// Packets per tick.
    pub rate: u64,
}

/// A legitimate node emitting benign packets every tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LegitSource {
    pub ip: Ipv4Addr,
    /// Packets per tick.
    pub rate: u64,
}

/// An active ingress filtering effect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngressRule {
    Block { subject: Ipv4Addr },
    RateLimit { subject: Ipv4Addr, cap: u64 },
    Isolate { target: Ipv4Addr },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstalledRule {
    pub rule: IngressRule,
    /// First tick on which the rule filters traffic.
    pub active_from: u64,
}

/// Per-tick delivered packet counts by class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickDelivery {
    pub tick: u64,
    pub attack: u64,
    pub legit: u64,
}

/// How each action kind maps onto an environment effect. Engine
/// configuration, overridable per run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectConfig {
    /// Ticks before a notification is considered delivered.
    pub notify_lag: u64,
    /// Ticks before a block rule starts filtering.
    pub block_lag: u64,
    /// Ticks before a rate limit starts filtering.
    pub rate_limit_lag: u64,
    /// Delivered packets per tick allowed through a rate limit.
    pub rate_limit_cap: u64,
    /// Ticks before an isolation rule starts filtering.
    pub isolate_lag: u64,
    /// Ticks a restarted target stays down.
    pub restart_downtime: u64,
}

impl Default for EffectConfig {
    fn default() -> Self {
        EffectConfig {
            notify_lag: 0,
            block_lag: 0,
            rate_limit_lag: 0,
            rate_limit_cap: 3,
            isolate_lag: 0,
            restart_downtime: 5,
        }
    }
}

/// The executor's record of one applied response.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseEffect {
    pub kind: ActionKind,
    pub subject: Ipv4Addr,
    pub applied_at: u64,
    pub cost_charged: f64,
    /// Ticks until the effect is in force.
    pub duration: u64,
    pub action_id: String,
    pub attack_id: String,
}

/// Construction parameters for a simulated environment.
#[derive(Debug, Clone)]
pub struct SimParams {
    pub target_ip: Ipv4Addr,
    pub attackers: Vec<AttackerNode>,
    pub legit_sources: Vec<LegitSource>,
    /// Payload marker per attack id, used to synthesize attack packets.
    pub markers: HashMap<String, Vec<u8>>,
    pub tick_us: u64,
    pub success_threshold: f64,
    pub effects: EffectConfig,
    pub seed: u64,
}

/// Deterministic discrete-tick network simulation.
#[derive(Debug, Clone)]
pub struct SimEnvironment {
    pub tick: u64,
    pub target_ip: Ipv4Addr,
    pub hosts: Vec<SimHost>,
    pub attackers: Vec<AttackerNode>,
    pub legit_sources: Vec<LegitSource>,
    pub ingress_rules: Vec<InstalledRule>,
    pub delivered_log: Vec<TickDelivery>,
    tick_us: u64,
    success_threshold: f64,
    effects: EffectConfig,
    markers: HashMap<String, Vec<u8>>,
    source_ports: HashMap<Ipv4Addr, u16>,
    seq: u32,
    rng: ChaCha8Rng,
}

impl SimEnvironment {
    pub fn new(params: SimParams) -> Result<Self, SimError> {
        if params.tick_us == 0 {
            return Err(SimError::InvalidConfig("tick_us must be positive".into()));
        }
        for attacker in &params.attackers {
            if !params.markers.contains_key(&attacker.attack_id) {
                return Err(SimError::InvalidConfig(format!(
                    "attacker {} uses attack `{}` with no payload signature",
                    attacker.ip, attacker.attack_id
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut source_ports = HashMap::new();
        for ip in params
            .attackers
            .iter()
            .map(|a| a.ip)
            .chain(params.legit_sources.iter().map(|l| l.ip))
        {
            source_ports.insert(ip, rng.gen_range(1024..=65535));
        }
        Ok(SimEnvironment {
            tick: 0,
            target_ip: params.target_ip,
            hosts: vec![SimHost {
                ip: params.target_ip,
                healthy: true,
                unhealthy_until: None,
            }],
            attackers: params.attackers,
            legit_sources: params.legit_sources,
            ingress_rules: Vec::new(),
            delivered_log: Vec::new(),
            tick_us: params.tick_us,
            success_threshold: params.success_threshold,
            effects: params.effects,
            markers: params.markers,
            source_ports,
            seq: 0,
            rng,
        })
    }

    pub fn now_us(&self) -> u64 {
        self.tick * self.tick_us
    }

    fn blocked(&self, ip: Ipv4Addr) -> bool {
        self.ingress_rules.iter().any(|r| {
            r.active_from <= self.tick
                && matches!(r.rule, IngressRule::Block { subject } if subject == ip)
        })
    }

    fn rate_cap(&self, ip: Ipv4Addr) -> Option<u64> {
        self.ingress_rules
            .iter()
            .filter(|r| r.active_from <= self.tick)
            .filter_map(|r| match r.rule {
                IngressRule::RateLimit { subject, cap } if subject == ip => Some(cap),
                _ => None,
            })
            .min()
    }

    fn destination_reachable(&self, ip: Ipv4Addr) -> bool {
        let isolated = self.ingress_rules.iter().any(|r| {
            r.active_from <= self.tick
                && matches!(r.rule, IngressRule::Isolate { target } if target == ip)
        });
        let down = self.hosts.iter().any(|h| h.ip == ip && !h.healthy);
        !isolated && !down
    }

    fn delivered_from(&self, ip: Ipv4Addr, rate: u64) -> u64 {
        if !self.destination_reachable(self.target_ip) || self.blocked(ip) {
            return 0;
        }
        match self.rate_cap(ip) {
            Some(cap) => rate.min(cap),
            None => rate,
        }
    }

    fn push_record(
        &mut self,
        out: &mut Vec<PacketRecord>,
        src_ip: Ipv4Addr,
        payload: Vec<u8>,
        intra: &mut u64,
    ) {
        self.seq = self.seq.wrapping_add(1);
        out.push(PacketRecord {
            timestamp_us: self.now_us() + *intra,
            src_ip,
            src_port: self.source_ports.get(&src_ip).copied().unwrap_or(1024),
            dst_ip: self.target_ip,
            dst_port: 80,
            protocol: Protocol::Tcp,
            flags: TcpFlags::ACK,
            seq: self.seq,
            payload,
        });
        *intra += 1;
    }

    /// Advances one tick: recovers restarted hosts, lets every active source
    /// emit, applies ingress filtering, logs per-class delivery counts, and
    /// returns the packets that reached their destination this tick.
    pub fn step(&mut self) -> Vec<PacketRecord> {
        for host in &mut self.hosts {
            if let Some(until) = host.unhealthy_until {
                if until <= self.tick {
                    host.healthy = true;
                    host.unhealthy_until = None;
                }
            }
        }
        let mut delivered = Vec::new();
        let mut intra = 0u64;
        let mut attack_count = 0u64;
        let mut legit_count = 0u64;

        let attackers = self.attackers.clone();
        for attacker in attackers.iter().filter(|a| a.active) {
            let n = self.delivered_from(attacker.ip, attacker.rate);
            attack_count += n;
            let marker = self.markers[&attacker.attack_id].clone();
            let payload = attack_payload(self.target_ip, &marker);
            for _ in 0..n {
                self.push_record(&mut delivered, attacker.ip, payload.clone(), &mut intra);
            }
        }
        let sources = self.legit_sources.clone();
        for source in &sources {
            let n = self.delivered_from(source.ip, source.rate);
            legit_count += n;
            for _ in 0..n {
                let payload =
                    BENIGN_PAYLOADS[self.rng.gen_range(0..BENIGN_PAYLOADS.len())].to_vec();
                self.push_record(&mut delivered, source.ip, payload, &mut intra);
            }
        }
        self.delivered_log.push(TickDelivery {
            tick: self.tick,
            attack: attack_count,
            legit: legit_count,
        });
        self.tick += 1;
        delivered
    }

    /// First tick on which attack traffic was delivered.
    pub fn first_attack_tick(&self) -> Option<u64> {
        self.delivered_log
            .iter()
            .find(|d| d.attack > 0)
            .map(|d| d.tick)
    }

    fn is_known_source(&self, ip: Ipv4Addr) -> bool {
        self.attackers.iter().any(|a| a.ip == ip) || self.legit_sources.iter().any(|l| l.ip == ip)
    }

    /// Installs the effect implied by the plan's action against the most
    /// offending aggregate (largest quantity; key order breaks ties) and
    /// charges the knowledge base's cost estimate for the pair.
    pub fn apply_action(
        &mut self,
        plan: &ResponsePlan,
        aggregates: &[AttackAggregate],
        kb: &KnowledgeBase,
    ) -> Result<ResponseEffect, SimError> {
        let top = aggregates
            .iter()
            .fold(None::<&AttackAggregate>, |best, a| match best {
                Some(b) if b.quantity >= a.quantity => best,
                _ => Some(a),
            })
            .ok_or(SimError::NoOffender)?;
        let action = kb
            .action(&plan.selected_action_id)
            .ok_or_else(|| SimError::UnknownAction(plan.selected_action_id.clone()))?;
        let cost_charged = kb
            .profile(&action.id, &top.attack_id)
            .ok_or_else(|| SimError::MissingProfile {
                action_id: action.id.clone(),
                attack_id: top.attack_id.clone(),
            })?
            .cost;
        let (subject, duration) = match action.kind {
            ActionKind::Notify => (top.src_ip, self.effects.notify_lag),
            ActionKind::BlockSource => {
                if !self.is_known_source(top.src_ip) {
                    return Err(SimError::UnknownEndpoint(top.src_ip));
                }
                let duration = self.effects.block_lag;
                self.ingress_rules.push(InstalledRule {
                    rule: IngressRule::Block {
                        subject: top.src_ip,
                    },
                    active_from: self.tick + duration,
                });
                (top.src_ip, duration)
            }
            ActionKind::RateLimitSource => {
                if !self.is_known_source(top.src_ip) {
                    return Err(SimError::UnknownEndpoint(top.src_ip));
                }
                let duration = self.effects.rate_limit_lag;
                self.ingress_rules.push(InstalledRule {
                    rule: IngressRule::RateLimit {
                        subject: top.src_ip,
                        cap: self.effects.rate_limit_cap,
                    },
                    active_from: self.tick + duration,
                });
                (top.src_ip, duration)
            }
            ActionKind::IsolateTarget => {
                if !self.hosts.iter().any(|h| h.ip == top.dst_ip) {
                    return Err(SimError::UnknownEndpoint(top.dst_ip));
                }
                let duration = self.effects.isolate_lag;
                self.ingress_rules.push(InstalledRule {
                    rule: IngressRule::Isolate { target: top.dst_ip },
                    active_from: self.tick + duration,
                });
                (top.dst_ip, duration)
            }
            ActionKind::RestartTarget => {
                let duration = self.effects.restart_downtime;
                let until = self.tick + duration;
                let host = self
                    .hosts
                    .iter_mut()
                    .find(|h| h.ip == top.dst_ip)
                    .ok_or(SimError::UnknownEndpoint(top.dst_ip))?;
                host.healthy = false;
                host.unhealthy_until = Some(until);
                (top.dst_ip, duration)
            }
        };
        Ok(ResponseEffect {
            kind: action.kind,
            subject,
            applied_at: self.tick,
            cost_charged,
            duration,
            action_id: action.id.clone(),
            attack_id: top.attack_id.clone(),
        })
    }

    /// Judges an applied effect: success iff the mean delivered attack rate
    /// over the trailing window is below the configured threshold. Observed
    /// time spans first attack delivery through effect activation.
    pub fn evaluate_outcome(
        &self,
        effect: &ResponseEffect,
        window: u64,
    ) -> Result<OutcomeRecord, SimError> {
        if window == 0 {
            return Err(SimError::InvalidWindow);
        }
        let elapsed = self.tick.saturating_sub(effect.applied_at);
        if elapsed < window {
            return Err(SimError::WindowNotElapsed { elapsed, window });
        }
        let tail = &self.delivered_log[self.delivered_log.len() - window as usize..];
        let mean_attack = tail.iter().map(|d| d.attack).sum::<u64>() as f64 / window as f64;
        let queueing = effect
            .applied_at
            .saturating_sub(self.first_attack_tick().unwrap_or(effect.applied_at));
        Ok(OutcomeRecord {
            action_id: effect.action_id.clone(),
            attack_id: effect.attack_id.clone(),
            success: mean_attack < self.success_threshold,
            observed_time: (effect.duration + queueing) as f64,
            observed_cost: effect.cost_charged,
            timestamp_us: self.now_us(),
        })
    }
}

/// Everything one loop cycle needs: the knowledge base, the simulated
/// traffic, and the monitor/analysis/evaluation parameters.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub kb: KnowledgeBase,
    pub target_ip: Ipv4Addr,
    pub attackers: Vec<AttackerNode>,
    pub legit_sources: Vec<LegitSource>,
    pub flush: FlushPolicy,
    pub workers: usize,
    pub success_threshold: f64,
    pub eval_window: u64,
    /// Packets the analysis phase consumes per tick.
    pub analysis_rate: u64,
    pub plan_ticks: u64,
    pub tick_us: u64,
    pub effects: EffectConfig,
    pub max_monitor_ticks: u64,
}

impl LoopConfig {
    pub fn new(kb: KnowledgeBase) -> Self {
        LoopConfig {
            kb,
            target_ip: crate::defaults::DEFAULT_TARGET_IP,
            attackers: Vec::new(),
            legit_sources: Vec::new(),
            flush: FlushPolicy {
                max_elapsed: std::time::Duration::from_millis(50),
                max_volume: 16 * 1024,
            },
            workers: 4,
            success_threshold: 1.0,
            eval_window: 5,
            analysis_rate: 10_000,
            plan_ticks: 1,
            tick_us: 1_000,
            effects: EffectConfig::default(),
            max_monitor_ticks: 10_000,
        }
    }
}

/// Phase durations and result of one loop cycle, all in ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopMetrics {
    pub detect_ticks: u64,
    pub plan_ticks: u64,
    pub execute_ticks: u64,
    /// Ticks between first attack delivery and the triggering flush.
    pub queueing_ticks: u64,
    /// Ticks from first attack delivery to effect application.
    pub total_latency: u64,
    /// None when the cycle detected nothing and took no action.
    pub outcome: Option<bool>,
    pub packets_processed: u64,
    pub selected_action: Option<String>,
    pub expected_utility: Option<f64>,
}

/// Drives monitor -> analyze -> plan -> execute -> knowledge cycles over a
/// persistent environment, feeding each cycle's outcome back into the
/// knowledge base.
#[derive(Debug)]
pub struct MapekEngine {
    env: SimEnvironment,
    kb: KnowledgeBase,
    flush: FlushPolicy,
    workers: usize,
    eval_window: u64,
    analysis_rate: u64,
    plan_ticks: u64,
    max_monitor_ticks: u64,
}

impl MapekEngine {
    pub fn new(config: LoopConfig, seed: u64) -> Result<Self, SimError> {
        config.kb.validate()?;
        if config.workers == 0 {
            return Err(SimError::InvalidConfig("workers must be at least 1".into()));
        }
        if config.eval_window == 0 {
            return Err(SimError::InvalidWindow);
        }
        if config.analysis_rate == 0 {
            return Err(SimError::InvalidConfig(
                "analysis_rate must be positive".into(),
            ));
        }
        config.flush.validate().map_err(SimError::InvalidConfig)?;
        let mut markers = HashMap::new();
        for rule in &config.kb.signatures {
            if let Matcher::PayloadContains(marker) = &rule.matcher {
                markers
                    .entry(rule.attack_id.clone())
                    .or_insert_with(|| marker.clone());
            }
        }
        let env = SimEnvironment::new(SimParams {
            target_ip: config.target_ip,
            attackers: config.attackers,
            legit_sources: config.legit_sources,
            markers,
            tick_us: config.tick_us,
            success_threshold: config.success_threshold,
            effects: config.effects,
            seed,
        })?;
        Ok(MapekEngine {
            env,
            kb: config.kb,
            flush: config.flush,
            workers: config.workers,
            eval_window: config.eval_window,
            analysis_rate: config.analysis_rate,
            plan_ticks: config.plan_ticks,
            max_monitor_ticks: config.max_monitor_ticks,
        })
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn env(&self) -> &SimEnvironment {
        &self.env
    }

    pub fn into_kb(self) -> KnowledgeBase {
        self.kb
    }

    /// One full cycle. Returns the phase metrics; the updated knowledge base
    /// stays inside the engine for the next cycle.
    pub fn run_cycle(&mut self) -> Result<LoopMetrics, SimError> {
        // Monitor: buffer delivered traffic until the flush policy triggers.
        let mut buffer = CaptureBuffer::new(self.env.now_us());
        let mut monitored = 0u64;
        loop {
            for record in self.env.step() {
                buffer.push(record);
            }
            monitored += 1;
            if monitor_flush(&buffer, &self.flush, self.env.now_us()) == FlushDecision::Flush
                || monitored >= self.max_monitor_ticks
            {
                break;
            }
        }
        let flush_tick = self.env.tick;
        let packets_processed = buffer.len() as u64;

        // Analyze: map-reduce detection over the flushed buffer. Monitoring
        // pauses while the analysis runs; the environment does not.
        let aggregates = run_analysis(&buffer.records, &self.kb.signatures, self.workers)?;
        let detect_ticks = packets_processed.div_ceil(self.analysis_rate).max(1);
        for _ in 0..detect_ticks {
            self.env.step();
        }
        let queueing_ticks =
            flush_tick.saturating_sub(self.env.first_attack_tick().unwrap_or(flush_tick));
        if aggregates.is_empty() {
            return Ok(LoopMetrics {
                detect_ticks,
                plan_ticks: 0,
                execute_ticks: 0,
                queueing_ticks: 0,
                total_latency: 0,
                outcome: None,
                packets_processed,
                selected_action: None,
                expected_utility: None,
            });
        }

        // Plan: expected-utility selection over the detected attack set.
        let detected: Vec<String> = self
            .kb
            .attacks
            .iter()
            .filter(|a| aggregates.iter().any(|g| g.attack_id == a.id))
            .map(|a| a.id.clone())
            .collect();
        let plan = select_response(&self.kb, &detected, self.env.now_us())?;
        for _ in 0..self.plan_ticks {
            self.env.step();
        }

        // Execute, then give the effect time to roll out plus the
        // evaluation window.
        let effect = self.env.apply_action(&plan, &aggregates, &self.kb)?;
        for _ in 0..effect.duration + self.eval_window {
            self.env.step();
        }
        let outcome = self.env.evaluate_outcome(&effect, self.eval_window)?;

        // Knowledge: fold the observation back into the profiles.
        self.kb = self.kb.record_outcome(&outcome)?;

        let total_latency = effect
            .applied_at
            .saturating_sub(self.env.first_attack_tick().unwrap_or(effect.applied_at));
        Ok(LoopMetrics {
            detect_ticks,
            plan_ticks: self.plan_ticks,
            execute_ticks: effect.duration,
            queueing_ticks,
            total_latency,
            outcome: Some(outcome.success),
            packets_processed,
            selected_action: Some(plan.selected_action_id.clone()),
            expected_utility: Some(plan.expected_utility),
        })
    }
}

/// Runs a single monitor/analyze/plan/execute/knowledge cycle.
pub fn run_mapek_loop(
    config: LoopConfig,
    seed: u64,
) -> Result<(LoopMetrics, KnowledgeBase), SimError> {
    let mut engine = MapekEngine::new(config, seed)?;
    let metrics = engine.run_cycle()?;
    Ok((metrics, engine.into_kb()))
}

/// Structured text block for one cycle's metrics.
pub fn render_metrics(metrics: &LoopMetrics, cycle: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "cycle {cycle}");
    let _ = writeln!(out, "  packets_processed  {}", metrics.packets_processed);
    let _ = writeln!(out, "  detect_ticks       {}", metrics.detect_ticks);
    let _ = writeln!(out, "  plan_ticks         {}", metrics.plan_ticks);
    let _ = writeln!(out, "  execute_ticks      {}", metrics.execute_ticks);
    let _ = writeln!(out, "  queueing_ticks     {}", metrics.queueing_ticks);
    let _ = writeln!(out, "  total_latency      {}", metrics.total_latency);
    let _ = writeln!(
        out,
        "  selected_action    {}",
        metrics.selected_action.as_deref().unwrap_or("-")
    );
    match metrics.expected_utility {
        Some(eu) => {
            let _ = writeln!(out, "  expected_utility   {eu:.6}");
        }
        None => {
            let _ = writeln!(out, "  expected_utility   -");
        }
    }
    let _ = writeln!(
        out,
        "  outcome            {}",
        match metrics.outcome {
            Some(true) => "success",
            Some(false) => "failure",
            None => "-",
        }
    );
    out
}
