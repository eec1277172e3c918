//! `fbts` command-line driver.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or validation
//! error, 3 no exact oracle for the environment, 4 checkpoint integrity error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fbts::error::FbtsError;
use fbts::harness::{self, Algorithm, ExperimentConfig, RunManifest};
use fbts::pool::WorkerPool;

#[derive(Parser)]
#[command(name = "fbts", version, about = "Feedback-based tree search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with batch tree search.
    Train(TrainArgs),
    /// Run a comparison agent (direct policy iteration or approximate value iteration).
    Baseline(BaselineArgs),
    /// Exact bound diagnostics for a finished run on a finite environment.
    Diagnose(DiagnoseArgs),
    /// Run a grid of overrides over several seeds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// Flat TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// `key=value` applied on top of the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory. Defaults to `$FBTS_OUT_DIR/<algorithm>-seed<seed>`
    /// (or `runs/...`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    algorithm: Option<TrainAlgorithm>,
    /// Continue the interrupted run in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainAlgorithm {
    Fbts,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineAlgorithm {
    Dpi,
    Avi,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    algorithm: BaselineAlgorithm,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Run directory holding manifest.toml.
    run_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Grid axis `key=v1,v2,...`; repeatable, crossed.
    #[arg(long, value_name = "KEY=V1,V2")]
    grid: Vec<String>,
    /// Seeds as `a..b` or a comma list.
    #[arg(long, default_value = "0")]
    seeds: String,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

enum Failure {
    Usage(String),
    Fbts(FbtsError),
}

impl From<FbtsError> for Failure {
    fn from(e: FbtsError) -> Self {
        Failure::Fbts(e)
    }
}

fn exit_code(e: &FbtsError) -> u8 {
    match e.root_cause() {
        FbtsError::InvalidParameter(_)
        | FbtsError::Parse { .. }
        | FbtsError::DimensionMismatch { .. }
        | FbtsError::ActionOutOfRange { .. } => 2,
        FbtsError::NoOracle(_) => 3,
        FbtsError::Integrity { .. } => 4,
        _ => 1,
    }
}

fn load_config(c: &Common, algorithm: Option<Algorithm>) -> Result<(ExperimentConfig, Vec<String>), Failure> {
    let mut overrides = c.overrides.clone();
    if let Some(a) = algorithm {
        overrides.push(format!("algorithm={}", a.name()));
    }
    if let Some(s) = c.seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = ExperimentConfig::load(&c.config, &overrides)?;
    Ok((cfg, overrides))
}

fn out_dir(c: &Common, cfg: &ExperimentConfig) -> PathBuf {
    c.out_dir
        .clone()
        .unwrap_or_else(|| harness::default_out_dir().join(format!("{}-seed{}", cfg.algorithm.name(), cfg.seed)))
}

fn pool(workers: usize) -> Result<WorkerPool, Failure> {
    Ok(WorkerPool::new(workers)?)
}

fn report(dir: &Path, m: &RunManifest) {
    println!("run directory: {}", dir.display());
    println!("iterations: {}  transitions: {}", m.completed_iterations, m.transitions);
    if let Some(last) = m.metrics.last() {
        match last.suboptimality {
            Some(s) => println!("final suboptimality: {s:.6}"),
            None => println!("final suboptimality: n/a (no exact oracle)"),
        }
    }
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let (cfg, overrides) = load_config(&a.common, a.algorithm.map(|_| Algorithm::Fbts))?;
    if cfg.algorithm != Algorithm::Fbts {
        return Err(Failure::Usage(format!(
            "config selects algorithm {:?}; use `fbts baseline` for comparison agents",
            cfg.algorithm.name()
        )));
    }
    let dir = out_dir(&a.common, &cfg);
    let pool = pool(a.common.workers)?;
    let m = if a.resume {
        harness::resume_experiment(&dir, &pool)?
    } else {
        harness::run_experiment(&cfg, &overrides, &dir, &pool)?
    };
    report(&dir, &m);
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<(), Failure> {
    let alg = match a.algorithm {
        BaselineAlgorithm::Dpi => Algorithm::Dpi,
        BaselineAlgorithm::Avi => Algorithm::Avi,
    };
    let (cfg, overrides) = load_config(&a.common, Some(alg))?;
    let dir = out_dir(&a.common, &cfg);
    let m = harness::run_experiment(&cfg, &overrides, &dir, &pool(a.common.workers)?)?;
    report(&dir, &m);
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> Result<(), Failure> {
    let dir = a
        .run_dir
        .or(a.out_dir)
        .ok_or_else(|| Failure::Usage("diagnose needs a run directory".into()))?;
    let d = harness::diagnose_run(&dir)?;
    println!("loss-to-performance bound: {} (lhs {:.6}, rhs {:.6})", d.performance_bound.verdict(), d.performance_bound.lhs, d.performance_bound.rhs);
    if let Some(t) = &d.final_bound {
        println!("final bound: {} (lhs {:.6}, rhs {:.6})", t.verdict(), t.lhs, t.rhs);
    }
    for r in &d.rows {
        println!("k={} true_loss={:.6} suboptimality={:.6}", r.k, r.true_loss, r.suboptimality);
    }
    Ok(())
}

fn parse_seeds(raw: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Usage(format!("cannot read seeds {raw:?}; use a..b or a,b,c"));
    if let Some((a, b)) = raw.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    raw.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let (cfg, _) = load_config(&a.common, None)?;
    let axes = a.grid.iter().map(|g| harness::run::parse_grid_axis(g)).collect::<Result<Vec<_>, _>>()?;
    let seeds = parse_seeds(&a.seeds)?;
    let dir = a.common.out_dir.clone().unwrap_or_else(|| harness::default_out_dir().join("sweep"));
    let rows = harness::run_sweep(&cfg, &axes, &seeds, &dir, &pool(a.common.workers)?)?;
    println!("sweep directory: {}", dir.display());
    for r in rows {
        let sub = r.final_suboptimality.map(|s| format!("{s:.6}")).unwrap_or_else(|| "n/a".into());
        println!("point {} [{}] seed {}: suboptimality {sub}", r.point, r.settings, r.seed);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Baseline(a) => baseline(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Fbts(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
