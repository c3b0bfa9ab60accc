//! Acceptance suite. Each test checks one numbered criterion at its stated
//! tolerance and prints a single pass/fail line (visible with
//! `cargo test --test acceptance -- --nocapture`).

use std::net::Ipv4Addr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use airs::analysis::{aggregate_machine_lines, run_analysis};
use airs::capture::{attack_payload, scale_dataset, PacketRecord, Protocol, TcpFlags};
use airs::defaults;
use airs::kb::{
    ActionKind, ActionProfile, AttackType, KnowledgeBase, OutcomeRecord, ResponseAction,
};
use airs::planner::{select_response, utility_cell};
use airs::simenv::{AttackerNode, LegitSource, LoopConfig, MapekEngine};

fn criterion(number: u32, description: &str, check: impl FnOnce() -> Result<(), String>) {
    match check() {
        Ok(()) => println!("[PASS] criterion {number}: {description}"),
        Err(reason) => {
            println!("[FAIL] criterion {number}: {description}: {reason}");
            panic!("criterion {number} failed: {reason}");
        }
    }
}

fn close(actual: f64, expected: f64, tolerance: f64, what: &str) -> Result<(), String> {
    if (actual - expected).abs() <= tolerance {
        Ok(())
    } else {
        Err(format!("{what}: {actual} vs {expected} (tol {tolerance})"))
    }
}

#[test]
fn criterion_1_reference_example_reproduction() {
    criterion(
        1,
        "reference tables reproduced within 1e-3, selection a1, under 1s",
        || {
            let started = Instant::now();
            let kb = defaults::default_kb();
            let all = vec!["E1".to_string(), "E2".into(), "E3".into()];
            let full = select_response(&kb, &all, 0).map_err(|e| e.to_string())?;

            let normalized: [(&str, &str, f64, f64); 9] = [
                ("a1", "E1", 0.034, 0.111),
                ("a1", "E2", 0.068, 0.333),
                ("a1", "E3", 0.655, 1.000),
                ("a2", "E1", 0.137, 0.555),
                ("a2", "E2", 0.068, 0.444),
                ("a2", "E3", 1.000, 1.000),
                ("a3", "E1", 0.000, 0.000),
                ("a3", "E2", 0.137, 0.666),
                ("a3", "E3", 0.655, 1.000),
            ];
            for (action, attack, time, cost) in normalized {
                let cell = full
                    .table
                    .cell(action, attack)
                    .ok_or_else(|| format!("missing cell ({action}, {attack})"))?;
                close(
                    cell.norm_time,
                    time,
                    1e-3,
                    &format!("norm time ({action}, {attack})"),
                )?;
                close(
                    cell.norm_cost,
                    cost,
                    1e-3,
                    &format!("norm cost ({action}, {attack})"),
                )?;
            }

            let utilities: [(&str, &str, f64); 9] = [
                ("a1", "E1", 0.087),
                ("a1", "E2", 0.213),
                ("a1", "E3", 0.188),
                ("a2", "E1", 0.118),
                ("a2", "E2", 0.066),
                ("a2", "E3", 0.133),
                ("a3", "E1", 0.000),
                ("a3", "E2", 0.110),
                ("a3", "E3", 0.037),
            ];
            for (action, attack, utility) in utilities {
                let cell = full
                    .table
                    .cell(action, attack)
                    .ok_or_else(|| format!("missing cell ({action}, {attack})"))?;
                close(
                    cell.utility,
                    utility,
                    1e-3,
                    &format!("utility ({action}, {attack})"),
                )?;
            }

            let detected = vec!["E1".to_string(), "E3".into()];
            let plan = select_response(&kb, &detected, 0).map_err(|e| e.to_string())?;
            for (action, sum) in [("a1", 0.275), ("a2", 0.251), ("a3", 0.037)] {
                close(
                    plan.table.action_sum(action).unwrap(),
                    sum,
                    1e-3,
                    &format!("sum {action}"),
                )?;
            }
            if plan.selected_action_id != "a1" {
                return Err(format!("selected {}, expected a1", plan.selected_action_id));
            }
            close(
                plan.expected_utility,
                0.275,
                1e-3,
                "selected expected utility",
            )?;

            let elapsed = started.elapsed();
            if elapsed.as_secs_f64() >= 1.0 {
                return Err(format!("took {elapsed:?}, budget is 1s"));
            }
            Ok(())
        },
    );
}

#[test]
fn criterion_2_detection_completeness_and_soundness() {
    criterion(
        2,
        "130k-packet dataset with 306 runs yields exactly 306 aggregates of 100, clean dataset yields none, under 60s",
        || {
            let started = Instant::now();
            let records = scale_dataset(130_000, 306, 11).map_err(|e| e.to_string())?;
            if records.len() != 130_000 {
                return Err(format!("dataset has {} packets", records.len()));
            }
            let aggregates =
                run_analysis(&records, &defaults::default_rules(), 8).map_err(|e| e.to_string())?;
            if aggregates.len() != 306 {
                return Err(format!("{} aggregates, expected 306", aggregates.len()));
            }
            if let Some(bad) = aggregates.iter().find(|a| a.quantity != 100) {
                return Err(format!(
                    "aggregate for {} counted {}, expected the per-run match count 100",
                    bad.src_ip, bad.quantity
                ));
            }

            let clean = scale_dataset(130_000, 0, 12).map_err(|e| e.to_string())?;
            let none =
                run_analysis(&clean, &defaults::default_rules(), 8).map_err(|e| e.to_string())?;
            if !none.is_empty() {
                return Err(format!("clean dataset produced {} aggregates", none.len()));
            }

            let elapsed = started.elapsed();
            if elapsed.as_secs() >= 60 {
                return Err(format!("took {elapsed:?}, budget is 60s"));
            }
            Ok(())
        },
    );
}

fn flood_packets(
    src: Ipv4Addr,
    target: Ipv4Addr,
    attack_id: &str,
    count: u64,
    base_ts: u64,
) -> Vec<PacketRecord> {
    let marker = defaults::signature_marker(attack_id).unwrap();
    let payload = attack_payload(target, &marker);
    (0..count)
        .map(|i| PacketRecord {
            timestamp_us: base_ts + i * 7,
            src_ip: src,
            src_port: 1040,
            dst_ip: target,
            dst_port: 80,
            protocol: Protocol::Tcp,
            flags: TcpFlags::ACK,
            seq: i as u32,
            payload: payload.clone(),
        })
        .collect()
}

#[test]
fn criterion_3_three_source_scenario() {
    criterion(
        3,
        "three sources with 275/2000/2000 matching packets reduce to the three expected rows",
        || {
            let target = defaults::DEFAULT_TARGET_IP;
            let mut records = Vec::new();
            let rows = [
                (Ipv4Addr::new(150, 162, 63, 200), "E1", 275u64),
                (Ipv4Addr::new(150, 162, 63, 205), "E2", 2000),
                (Ipv4Addr::new(150, 162, 63, 202), "E3", 2000),
            ];
            for (i, (src, attack, count)) in rows.iter().enumerate() {
                records.extend(flood_packets(
                    *src,
                    target,
                    attack,
                    *count,
                    1_600_000_000_000_000 + i as u64 * 3,
                ));
            }
            // benign background must not add rows
            let spec = airs::capture::TrafficSpec {
                legit_packet_count: 1500,
                legit_hosts: defaults::legit_host_pool(),
                target_ip: target,
                attack_runs: vec![],
                seed: 5,
            };
            records.extend(airs::capture::generate_legit_traffic(&spec).unwrap());
            records.sort_by_key(|r| r.timestamp_us);

            let aggregates =
                run_analysis(&records, &defaults::default_rules(), 4).map_err(|e| e.to_string())?;
            if aggregates.len() != 3 {
                return Err(format!("{} aggregates, expected 3", aggregates.len()));
            }
            for (src, attack, count) in rows {
                let found = aggregates
                    .iter()
                    .find(|a| a.src_ip == src && a.attack_id == attack)
                    .ok_or_else(|| format!("no aggregate for {src} / {attack}"))?;
                if found.dst_ip != target || found.quantity != count {
                    return Err(format!(
                        "row {src}/{attack}: got dst {} quantity {}, expected {target} {count}",
                        found.dst_ip, found.quantity
                    ));
                }
            }
            Ok(())
        },
    );
}

#[test]
fn criterion_4_determinism_under_parallelism() {
    criterion(
        4,
        "20 seeded datasets produce byte-identical analyses for 1, 2 and 8 workers",
        || {
            let rules = defaults::default_rules();
            for seed in 0..20u64 {
                let records = scale_dataset(5_100, 24, seed).map_err(|e| e.to_string())?;
                let baseline = aggregate_machine_lines(
                    &run_analysis(&records, &rules, 1).map_err(|e| e.to_string())?,
                );
                for workers in [2usize, 8] {
                    let lines = aggregate_machine_lines(
                        &run_analysis(&records, &rules, workers).map_err(|e| e.to_string())?,
                    );
                    if lines.as_bytes() != baseline.as_bytes() {
                        return Err(format!(
                            "seed {seed}: workers {workers} output differs from single worker"
                        ));
                    }
                }
            }
            Ok(())
        },
    );
}

fn random_kb(rng: &mut ChaCha8Rng) -> KnowledgeBase {
    let n_actions = rng.gen_range(2..6);
    let n_attacks = rng.gen_range(1..5);
    let attacks = (0..n_attacks)
        .map(|i| AttackType {
            id: format!("E{i}"),
            name: format!("attack {i}"),
            description: String::new(),
        })
        .collect::<Vec<_>>();
    let actions = (0..n_actions)
        .map(|i| ResponseAction {
            id: format!("a{i}"),
            name: format!("action {i}"),
            kind: ActionKind::Notify,
        })
        .collect::<Vec<_>>();
    let mut profiles = Vec::new();
    for action in 0..n_actions {
        for attack in 0..n_attacks {
            profiles.push(ActionProfile {
                action_id: format!("a{action}"),
                attack_id: format!("E{attack}"),
                // integer-valued estimates keep affine transforms exact
                time: f64::from(rng.gen_range(0u32..1000)),
                cost: f64::from(rng.gen_range(0u32..1000)),
                probability: f64::from(rng.gen_range(0u32..=100)) / 100.0,
                trials: 0,
                successes: 0,
            });
        }
    }
    KnowledgeBase {
        attacks,
        actions,
        profiles,
        signatures: vec![],
    }
}

#[test]
fn criterion_5_affine_invariance() {
    criterion(
        5,
        "positive affine rescaling of raw times/costs never changes normalization or selection (128 cases)",
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(505);
            for case in 0..128u32 {
                let kb = random_kb(&mut rng);
                let detected: Vec<String> = kb.attacks.iter().map(|a| a.id.clone()).collect();
                let base = select_response(&kb, &detected, 0).map_err(|e| e.to_string())?;

                let a_time = f64::from(rng.gen_range(1u32..=50));
                let b_time = f64::from(rng.gen_range(0u32..=500));
                let a_cost = f64::from(rng.gen_range(1u32..=50));
                let b_cost = f64::from(rng.gen_range(0u32..=500));
                let mut scaled = kb.clone();
                for profile in &mut scaled.profiles {
                    profile.time = profile.time * a_time + b_time;
                    profile.cost = profile.cost * a_cost + b_cost;
                }
                let transformed =
                    select_response(&scaled, &detected, 0).map_err(|e| e.to_string())?;

                if transformed.selected_action_id != base.selected_action_id {
                    return Err(format!(
                        "case {case}: selection changed {} -> {}",
                        base.selected_action_id, transformed.selected_action_id
                    ));
                }
                for (lhs, rhs) in base.table.cells.iter().zip(&transformed.table.cells) {
                    if lhs.norm_time != rhs.norm_time || lhs.norm_cost != rhs.norm_cost {
                        return Err(format!(
                            "case {case}: normalized value changed for ({}, {})",
                            lhs.action_id, lhs.attack_id
                        ));
                    }
                    if (lhs.utility - rhs.utility).abs() > 1e-12 {
                        return Err(format!(
                            "case {case}: utility drifted by {}",
                            (lhs.utility - rhs.utility).abs()
                        ));
                    }
                }
            }
            Ok(())
        },
    );
}

#[test]
fn criterion_6_monotonicity_suite() {
    criterion(
        6,
        "utility strictly monotone per argument; expected utility non-decreasing in detected attacks",
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(606);
            for _ in 0..500 {
                let p = rng.gen_range(0.01..=1.0);
                let c = rng.gen_range(0.0..=1.0);
                let t = rng.gen_range(0.0..=1.0);
                let u = utility_cell(p, c, t);
                let dp = rng.gen_range(1e-3..0.5);
                let dc = rng.gen_range(1e-3..0.5);
                let dt = rng.gen_range(1e-3..0.5);
                if p + dp <= 1.0 && utility_cell(p + dp, c, t) <= u {
                    return Err(format!("not increasing in probability at ({p}, {c}, {t})"));
                }
                if utility_cell(p, c + dc, t) >= u {
                    return Err(format!("not decreasing in cost at ({p}, {c}, {t})"));
                }
                if utility_cell(p, c, t + dt) >= u {
                    return Err(format!("not decreasing in time at ({p}, {c}, {t})"));
                }
            }

            for _ in 0..100 {
                let kb = random_kb(&mut rng);
                if kb.attacks.len() < 2 {
                    continue;
                }
                let all: Vec<String> = kb.attacks.iter().map(|a| a.id.clone()).collect();
                let smaller =
                    select_response(&kb, &all[..all.len() - 1], 0).map_err(|e| e.to_string())?;
                let larger = select_response(&kb, &all, 0).map_err(|e| e.to_string())?;
                for (action, sum) in &smaller.table.action_sums {
                    let extended = larger.table.action_sum(action).unwrap();
                    if extended < *sum - 1e-15 {
                        return Err(format!(
                            "adding an attack lowered {action}: {sum} -> {extended}"
                        ));
                    }
                }
            }
            Ok(())
        },
    );
}

fn blocking_loop_config() -> LoopConfig {
    let mut config = LoopConfig::new(defaults::default_kb());
    config.attackers = vec![AttackerNode {
        ip: Ipv4Addr::new(10, 9, 9, 9),
        attack_id: "E1".into(),
        active: true,
        rate: 8,
    }];
    config.legit_sources = vec![
        LegitSource {
            ip: Ipv4Addr::new(192, 168, 0, 10),
            rate: 3,
        },
        LegitSource {
            ip: Ipv4Addr::new(192, 168, 0, 11),
            rate: 2,
        },
    ];
    config.flush = airs::capture::FlushPolicy {
        max_elapsed: std::time::Duration::from_millis(8),
        max_volume: 1024 * 1024,
    };
    config
}

#[test]
fn criterion_7_closed_loop_blocking() {
    criterion(
        7,
        "loop blocks the attacker, the next window delivers zero, success is learned, all deterministically",
        || {
            let run = || -> Result<_, String> {
                let mut engine =
                    MapekEngine::new(blocking_loop_config(), 77).map_err(|e| e.to_string())?;
                let first = engine.run_cycle().map_err(|e| e.to_string())?;
                let window: Vec<u64> = engine
                    .env()
                    .delivered_log
                    .iter()
                    .rev()
                    .take(5)
                    .map(|d| d.attack)
                    .collect();
                let p_after = engine.kb().profile("a2", "E1").unwrap().probability;
                let second = engine.run_cycle().map_err(|e| e.to_string())?;
                Ok((first, window, p_after, second, engine.into_kb()))
            };

            let (first, window, p_after, second, kb) = run()?;
            // detected {E1}: block-source has the highest utility column value
            if first.selected_action.as_deref() != Some("a2") {
                return Err(format!("selected {:?}, expected a2", first.selected_action));
            }
            if first.outcome != Some(true) {
                return Err(format!("outcome {:?}, expected success", first.outcome));
            }
            if window.iter().any(|delivered| *delivered != 0) {
                return Err(format!("attack packets delivered post-block: {window:?}"));
            }
            let p_initial = defaults::default_kb()
                .profile("a2", "E1")
                .unwrap()
                .probability;
            if p_after <= p_initial {
                return Err(format!("probability {p_after} did not rise above {p_initial}"));
            }
            // the blocked source must vanish from the next cycle's analysis
            if second.outcome.is_some() || second.selected_action.is_some() {
                return Err(format!(
                    "second cycle still detected traffic: {second:?}"
                ));
            }

            let (first_b, window_b, p_after_b, second_b, kb_b) = run()?;
            if first_b != first || second_b != second || window_b != window {
                return Err("metrics differ between identical runs".into());
            }
            if (p_after_b, kb_b) != (p_after, kb) {
                return Err("knowledge base differs between identical runs".into());
            }
            Ok(())
        },
    );
}

#[test]
fn criterion_8_feedback_arithmetic() {
    criterion(
        8,
        "fresh profile: one success gives exactly 2/3, success then failure gives exactly 1/2",
        || {
            let kb = defaults::default_kb();
            let outcome = |success: bool| OutcomeRecord {
                action_id: "a2".into(),
                attack_id: "E1".into(),
                success,
                observed_time: 5.0,
                observed_cost: 6.0,
                timestamp_us: 0,
            };
            let after_success = kb
                .record_outcome(&outcome(true))
                .map_err(|e| e.to_string())?;
            let p1 = after_success.profile("a2", "E1").unwrap().probability;
            if p1 != 2.0 / 3.0 {
                return Err(format!("after one success: {p1}, expected exactly 2/3"));
            }
            let after_failure = after_success
                .record_outcome(&outcome(false))
                .map_err(|e| e.to_string())?;
            let p2 = after_failure.profile("a2", "E1").unwrap().probability;
            if p2 != 0.5 {
                return Err(format!("after success+failure: {p2}, expected exactly 0.5"));
            }
            Ok(())
        },
    );
}

#[test]
fn criterion_9_wall_clock_replacement() {
    criterion(
        9,
        "wall-clock figures are out of scope; determinism and oracle checks stand in for them",
        || {
            // spot-check the stand-in: worker count cannot change results
            let records = scale_dataset(2_040, 6, 99).map_err(|e| e.to_string())?;
            let rules = defaults::default_rules();
            let one = run_analysis(&records, &rules, 1).map_err(|e| e.to_string())?;
            let four = run_analysis(&records, &rules, 4).map_err(|e| e.to_string())?;
            if one != four {
                return Err("stand-in determinism check failed".into());
            }
            Ok(())
        },
    );
}
