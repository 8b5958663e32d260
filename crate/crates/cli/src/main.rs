//! `scpo-lab`: train, compare and self-check state-wise constrained policy
//! optimization and its trust-region baselines.
//!
//! Exit codes: 0 success, 1 failed property check or training error,
//! 2 usage or configuration error.

mod config;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use scpo_core::check::{run_checks, CheckOptions, Fault};
use scpo_core::trainer::{run, Algo, MetricsRow, RunConfig, METRICS_HEADER};

use crate::config::load_config;
use crate::report::{median_table, render_svg, COMPARE_METRICS};

const OUT_ENV: &str = "SCPO_LAB_OUT";
const DEFAULT_OUT: &str = "runs";
const COMPARE_WINDOW: usize = 10;

#[derive(Parser)]
#[command(name = "scpo-lab", version, about = "State-wise constrained policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm, once per seed.
    Train(TrainArgs),
    /// Train several algorithms on identical seeds and tabulate medians.
    Compare(CompareArgs),
    /// Run the built-in property suites.
    Check(CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file with [env], [algo] and [training] tables.
    #[arg(long)]
    config: PathBuf,
    /// Seeds to run; repeatable or comma separated.
    #[arg(long = "seed", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output root (defaults to $SCPO_LAB_OUT, then ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seeds concurrently, one worker per seed.
    #[arg(long)]
    parallel_seeds: bool,
    /// Config overrides such as `epochs=3` or `algo.delta=0.01`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Algorithm (overrides the config's algo.name).
    #[arg(long)]
    algo: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated algorithms, at least two.
    #[arg(long, value_delimiter = ',', required = true)]
    algos: Vec<String>,
    /// Also write curves.svg.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Deliberately break a component (grad_log_prob or fisher_vector_product).
    #[arg(long, value_name = "COMPONENT")]
    inject_fault: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn out_root(arg: &Option<PathBuf>) -> PathBuf {
    arg.clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn base_config(run: &RunArgs) -> Result<RunConfig, Failure> {
    load_config(&run.config, &run.overrides).map_err(Failure::Usage)
}

fn seeds_or_config(run: &RunArgs, config: &RunConfig) -> Vec<u64> {
    if run.seeds.is_empty() {
        vec![config.training.seed]
    } else {
        run.seeds.clone()
    }
}

fn seed_dir(root: &Path, algo: Algo, seed: u64) -> PathBuf {
    root.join(algo.name()).join(format!("seed{seed}"))
}

/// Runs every (config, directory) job, sequentially or one thread each.
fn execute(jobs: Vec<(RunConfig, PathBuf)>, parallel: bool) -> anyhow::Result<Vec<Vec<MetricsRow>>> {
    let one = |(cfg, dir): &(RunConfig, PathBuf)| -> anyhow::Result<Vec<MetricsRow>> {
        log::info!("{} seed {} -> {}", cfg.algo.name, cfg.training.seed, dir.display());
        let out = run(cfg, Some(dir))
            .with_context(|| format!("{} seed {} failed", cfg.algo.name, cfg.training.seed))?;
        Ok(out.rows)
    };
    if !parallel {
        return jobs.iter().map(one).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs.iter().map(|job| scope.spawn(move || one(job))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("worker panicked"))))
            .collect()
    })
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut config = base_config(&args.run)?;
    if let Some(name) = &args.algo {
        config.algo.name = Algo::parse(name).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let root = out_root(&args.run.out);
    let jobs = seeds_or_config(&args.run, &config)
        .into_iter()
        .map(|seed| {
            let mut cfg = config.clone();
            cfg.training.seed = seed;
            (cfg, seed_dir(&root, config.algo.name, seed))
        })
        .collect();
    let results = execute(jobs, args.run.parallel_seeds)?;
    for rows in &results {
        if let Some(last) = rows.last() {
            println!(
                "{} epoch {}: J_r {:.4} M_c {:.4} rho_c {:.6} max_statewise_cost {:.4}",
                config.algo.name, last.epoch, last.j_r, last.m_c, last.rho_c, last.max_statewise_cost
            );
        }
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let config = base_config(&args.run)?;
    let mut algos = Vec::new();
    for name in &args.algos {
        let algo = Algo::parse(name).map_err(|e| Failure::Usage(e.to_string()))?;
        if !algos.contains(&algo) {
            algos.push(algo);
        }
    }
    if algos.len() < 2 {
        return Err(Failure::Usage("compare needs at least two distinct algorithms".into()));
    }
    let seeds = seeds_or_config(&args.run, &config);
    let root = out_root(&args.run.out);
    let mut jobs = Vec::new();
    for &algo in &algos {
        for &seed in &seeds {
            let mut cfg = config.clone();
            cfg.algo.name = algo;
            cfg.training.seed = seed;
            jobs.push((cfg, seed_dir(&root, algo, seed)));
        }
    }
    let results = execute(jobs, args.run.parallel_seeds)?;

    let mut runs: BTreeMap<String, Vec<Vec<MetricsRow>>> = BTreeMap::new();
    fs::create_dir_all(&root).map_err(anyhow::Error::from)?;
    let mut joined = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(root.join("compare.csv"))
        .map_err(anyhow::Error::from)?;
    let mut header = vec!["algo", "seed"];
    header.extend(METRICS_HEADER);
    joined.write_record(&header).map_err(anyhow::Error::from)?;
    let mut results = results.into_iter();
    for &algo in &algos {
        for &seed in &seeds {
            let rows = results.next().expect("one result per job");
            for row in &rows {
                joined.serialize((algo.name(), seed, row)).map_err(anyhow::Error::from)?;
            }
            runs.entry(algo.name().to_string()).or_default().push(rows);
        }
    }
    joined.flush().map_err(anyhow::Error::from)?;

    let table = median_table(&runs, COMPARE_WINDOW);
    let mut out = csv::Writer::from_path(root.join("compare_table.csv")).map_err(anyhow::Error::from)?;
    let mut head = vec!["algo".to_string()];
    head.extend(COMPARE_METRICS.iter().map(|m| format!("median_{m}")));
    out.write_record(&head).map_err(anyhow::Error::from)?;
    println!(
        "median over {} seed(s) of the last {COMPARE_WINDOW} epochs",
        seeds.len()
    );
    println!("{:<18}{:>12}{:>12}{:>12}", "algo", "J_r", "M_c", "rho_c");
    for (algo, vals) in &table {
        println!("{algo:<18}{:>12.4}{:>12.4}{:>12.6}", vals[0], vals[1], vals[2]);
        let mut rec = vec![algo.clone()];
        rec.extend(vals.iter().map(|v| v.to_string()));
        out.write_record(&rec).map_err(anyhow::Error::from)?;
    }
    out.flush().map_err(anyhow::Error::from)?;
    if args.plot {
        fs::write(root.join("curves.svg"), render_svg(&runs)).map_err(anyhow::Error::from)?;
    }
    Ok(())
}

/// Returns whether every suite passed.
fn check(args: CheckArgs) -> Result<bool, Failure> {
    let fault = match &args.inject_fault {
        Some(name) => Some(
            Fault::parse(name).ok_or_else(|| Failure::Usage(format!("unknown fault component `{name}`")))?,
        ),
        None => None,
    };
    let report = run_checks(&CheckOptions { seed: args.seed, fault });
    let json = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?;
    println!("{json}");
    if let Some(path) = &args.report {
        fs::write(path, &json).with_context(|| format!("cannot write {}", path.display()))?;
    }
    for suite in &report.suites {
        eprintln!("{:<26} {:>5}/{:<5} passed", suite.name, suite.passed, suite.cases);
    }
    if !report.passed {
        eprintln!("failing suites: {}", report.failing_suites().join(", "));
    }
    Ok(report.passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Compare(a) => compare(a).map(|_| true),
        Command::Check(a) => check(a),
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
