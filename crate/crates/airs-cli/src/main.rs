//! Command-line driver: dataset generation, capture analysis, response
//! planning, the full autonomic loop, the built-in worked example, and a
//! partition-scaling benchmark.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 failed
//! self-check.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use airs::analysis::{aggregate_machine_lines, render_aggregate_table, run_analysis};
use airs::capture::{read_capture, scale_dataset, write_capture};
use airs::defaults;
use airs::kb::{load_kb, save_kb, KnowledgeBase};
use airs::planner::{plan_summary_line, render_plan_table, select_response, ResponsePlan};
use airs::simenv::{render_metrics, MapekEngine};

#[derive(Parser)]
#[command(
    name = "airs",
    about = "Autonomic intrusion-response engine",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic capture: legitimate background plus attack runs
    Generate {
        /// Total packet count
        #[arg(long)]
        packets: u64,
        /// Number of injected attack runs (102 packets each)
        #[arg(long)]
        attacks: u64,
        /// Generator seed; falls back to AIRS_SEED, then 1
        #[arg(long)]
        seed: Option<u64>,
        /// Output capture path
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect attacks in a capture and print the aggregate report
    Analyze {
        /// Capture file to analyze
        #[arg(long)]
        capture: PathBuf,
        /// Parallel map workers
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Knowledge base supplying the signature rules (default: built-in)
        #[arg(long)]
        kb: Option<PathBuf>,
    },
    /// Select the best response action for a set of detected attacks
    Plan {
        /// Knowledge base file (default: built-in)
        #[arg(long)]
        kb: Option<PathBuf>,
        /// Comma-separated detected attack ids, e.g. E1,E3
        #[arg(long)]
        attacks: String,
    },
    /// Run monitor/analyze/plan/execute cycles in the simulated environment
    Loop {
        /// Loop configuration file
        #[arg(long)]
        config: PathBuf,
        /// Simulation seed; falls back to AIRS_SEED, then the config file
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the built-in worked utility example and verify its values
    PaperExample,
    /// Time the analysis pipeline across worker counts
    Bench {
        /// Capture file to analyze
        #[arg(long)]
        capture: PathBuf,
        /// Comma-separated worker counts, e.g. 1,2,4
        #[arg(long, default_value = "1,2,4")]
        workers: String,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Check(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Check(m) => m,
        }
    }
}

fn data_err(err: impl std::fmt::Display) -> Failure {
    Failure::Data(err.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var("AIRS_SEED") {
        Ok(value) => value
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("AIRS_SEED `{value}` is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, Failure> {
    Ok(flag.or(env_seed()?).or(config).unwrap_or(1))
}

fn now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate {
            packets,
            attacks,
            seed,
            out,
        } => {
            let seed = resolve_seed(seed, None)?;
            let records = scale_dataset(packets, attacks, seed).map_err(data_err)?;
            write_capture(&records, &out).map_err(data_err)?;
            println!(
                "wrote {} packets ({} attack runs) to {}",
                records.len(),
                attacks,
                out.display()
            );
            Ok(())
        }
        Command::Analyze {
            capture,
            workers,
            kb,
        } => {
            if workers == 0 {
                return Err(Failure::Usage("--workers must be at least 1".into()));
            }
            let rules = match kb {
                Some(path) => load_kb(&path).map_err(data_err)?.signatures,
                None => defaults::default_rules(),
            };
            let records = read_capture(&capture).map_err(data_err)?;
            let aggregates = run_analysis(&records, &rules, workers).map_err(data_err)?;
            print!("{}", render_aggregate_table(&aggregates));
            println!();
            print!("{}", aggregate_machine_lines(&aggregates));
            Ok(())
        }
        Command::Plan { kb, attacks } => {
            let kb = load_kb_or_default(kb)?;
            let detected: Vec<String> = attacks
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            if detected.is_empty() {
                return Err(Failure::Usage("--attacks needs at least one id".into()));
            }
            let plan = select_response(&kb, &detected, now_us()).map_err(data_err)?;
            print!("{}", render_plan_table(&plan));
            println!("{}", plan_summary_line(&plan));
            Ok(())
        }
        Command::Loop { config, seed } => {
            let setup = config::load_loop_setup(&config).map_err(data_err)?;
            let seed = resolve_seed(seed, setup.seed)?;
            let mut engine = MapekEngine::new(setup.config, seed).map_err(data_err)?;
            for cycle in 1..=setup.cycles {
                let metrics = engine.run_cycle().map_err(data_err)?;
                print!("{}", render_metrics(&metrics, cycle as usize));
            }
            std::fs::create_dir_all(&setup.output_dir).map_err(|e| {
                data_err(format!("cannot create {}: {e}", setup.output_dir.display()))
            })?;
            let kb_path = setup.output_dir.join("kb_updated.txt");
            save_kb(engine.kb(), &kb_path).map_err(data_err)?;
            println!("knowledge base written to {}", kb_path.display());
            Ok(())
        }
        Command::PaperExample => paper_example(),
        Command::Bench { capture, workers } => bench(&capture, &workers),
    }
}

fn load_kb_or_default(path: Option<PathBuf>) -> Result<KnowledgeBase, Failure> {
    match path {
        Some(path) => load_kb(&path).map_err(data_err),
        None => Ok(defaults::default_kb()),
    }
}

/// Renders the normalized 3x3 matrix: per attack a (time, cost, probability)
/// triple per action.
fn render_normalized(plan: &ResponsePlan) -> String {
    let mut out = String::new();
    out.push_str("      ");
    for attack in &plan.table.attack_ids {
        out.push_str(&format!("{attack:^23}"));
    }
    out.push('\n');
    out.push_str("      ");
    for _ in &plan.table.attack_ids {
        out.push_str(&format!("{:>7}{:>7}{:>7}  ", "T", "C", "P"));
    }
    out.push('\n');
    for (action, _) in &plan.table.action_sums {
        out.push_str(&format!("{action:<6}"));
        for attack in &plan.table.attack_ids {
            let cell = plan.table.cell(action, attack).expect("complete matrix");
            out.push_str(&format!(
                "{:>7.3}{:>7.3}{:>7.3}  ",
                cell.norm_time, cell.norm_cost, cell.probability
            ));
        }
        out.push('\n');
    }
    out
}

/// Renders the per-cell utility matrix.
fn render_utilities(plan: &ResponsePlan) -> String {
    let mut out = String::new();
    out.push_str("      ");
    for attack in &plan.table.attack_ids {
        out.push_str(&format!("{attack:>8}"));
    }
    out.push('\n');
    for (action, _) in &plan.table.action_sums {
        out.push_str(&format!("{action:<6}"));
        for attack in &plan.table.attack_ids {
            let cell = plan.table.cell(action, attack).expect("complete matrix");
            out.push_str(&format!("{:>8.3}", cell.utility));
        }
        out.push('\n');
    }
    out
}

fn paper_example() -> Result<(), Failure> {
    let mut kb = defaults::default_kb();
    // test hook: deliberately corrupt the embedded data to force exit 3
    if std::env::var_os("AIRS_PAPER_EXAMPLE_CORRUPT").is_some() {
        kb.profiles[0].time += 5.0;
    }
    let everything: Vec<String> = kb.attacks.iter().map(|a| a.id.clone()).collect();
    let full = select_response(&kb, &everything, 0).map_err(data_err)?;
    let detected = vec!["E1".to_string(), "E3".into()];
    let plan = select_response(&kb, &detected, 0).map_err(data_err)?;

    println!("normalized estimates");
    print!("{}", render_normalized(&full));
    println!();
    println!("utility per cell");
    print!("{}", render_utilities(&full));
    println!();
    println!("expected utility over detected attacks");
    print!("{}", render_plan_table(&plan));
    println!("{}", plan_summary_line(&plan));

    let mut problems = Vec::new();
    let mut check = |what: &str, actual: f64, expected: f64| {
        if (actual - expected).abs() > 1e-3 {
            problems.push(format!("{what}: {actual:.3} != {expected:.3}"));
        }
    };
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
        let cell = full.table.cell(action, attack).expect("complete matrix");
        check(
            &format!("norm time ({action}, {attack})"),
            cell.norm_time,
            time,
        );
        check(
            &format!("norm cost ({action}, {attack})"),
            cell.norm_cost,
            cost,
        );
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
        let cell = full.table.cell(action, attack).expect("complete matrix");
        check(
            &format!("utility ({action}, {attack})"),
            cell.utility,
            utility,
        );
    }
    for (action, sum) in [("a1", 0.275), ("a2", 0.251), ("a3", 0.037)] {
        check(
            &format!("sum {action}"),
            plan.table.action_sum(action).expect("known action"),
            sum,
        );
    }
    if plan.selected_action_id != "a1" {
        problems.push(format!("selected {}, expected a1", plan.selected_action_id));
    }
    if problems.is_empty() {
        println!("all values verified");
        Ok(())
    } else {
        Err(Failure::Check(problems.join("; ")))
    }
}

fn fnv1a64(data: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in data {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn bench(capture: &std::path::Path, workers: &str) -> Result<(), Failure> {
    let counts: Vec<usize> = workers
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| Failure::Usage(format!("bad worker count `{s}`")))
        })
        .collect::<Result<_, _>>()?;
    if counts.is_empty() {
        return Err(Failure::Usage("--workers needs at least one count".into()));
    }
    let records = read_capture(capture).map_err(data_err)?;
    let rules = defaults::default_rules();
    println!(
        "{:<8} {:>10} {:>16}  digest",
        "workers", "millis", "packets_per_sec"
    );
    let mut digests = Vec::new();
    let mut throughput = Vec::new();
    for count in &counts {
        let started = Instant::now();
        let aggregates = run_analysis(&records, &rules, *count).map_err(data_err)?;
        let elapsed = started.elapsed();
        let digest = fnv1a64(aggregate_machine_lines(&aggregates).as_bytes());
        let pps = records.len() as f64 / elapsed.as_secs_f64().max(1e-9);
        println!(
            "{:<8} {:>10.1} {:>16.0}  {:016x}",
            count,
            elapsed.as_secs_f64() * 1e3,
            pps,
            digest
        );
        digests.push(digest);
        throughput.push(pps);
    }
    if digests.iter().any(|d| *d != digests[0]) {
        return Err(Failure::Check(
            "analysis results diverged across worker counts".into(),
        ));
    }
    // soft scaling check only: hardware may not deliver a speedup
    if counts.len() > 1 && throughput.last() < throughput.first() {
        eprintln!(
            "warning: {} workers were not faster than {} ({:.0} vs {:.0} packets/sec)",
            counts[counts.len() - 1],
            counts[0],
            throughput[throughput.len() - 1],
            throughput[0]
        );
    }
    Ok(())
}
