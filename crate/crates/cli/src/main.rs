//! `nodeformer` command-line interface: train, evaluate, benchmark, verify
//! and generate synthetic datasets.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 training divergence.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nodeformer::bench::{
    gumbel_convergence_sweep, scaling_benchmark, theorem_sweep, ConvergenceConfig, CountingAllocator, Method,
    ScalingConfig, TheoremSweepConfig,
};
use nodeformer::data::{cora_like, load_dataset, save_dataset, two_cluster, CoraLikeConfig, SplitTag, TwoClusterConfig};
use nodeformer::trainer::{evaluate, resolve_split, train_with, Metric, SavedModel};
use nodeformer::verify::{five_way_problem, run_suite, VerifyOptions};
use nodeformer::Error;

use config::RunSettings;

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

#[derive(Parser)]
#[command(name = "nodeformer", version, about = "Kernelized Gumbel-Softmax message passing for node classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, record, model and manifest.
    Train(TrainArgs),
    /// Score a saved model on one split.
    Eval(EvalArgs),
    /// Scaling and approximation benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Run the property suite.
    Verify(VerifyArgs),
    /// Write a synthetic dataset directory.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Field overrides as `--<field> <value>` or `--<field>=<value>`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Saved `model.json`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// accuracy or roc_auc; defaults to the training metric.
    #[arg(long)]
    metric: Option<String>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Forward time and peak allocation against N.
    Scaling(ScalingArgs),
    /// Kernel-estimate error over a (tau, m) grid.
    Theorem1(Theorem1Args),
    /// Kernelized Gumbel argmax against the exact categorical.
    Theorem2(Theorem2Args),
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096, 8192, 16384])]
    sizes: Vec<usize>,
    /// Dense-oracle sizes, at most 4096.
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 512, 1024, 2048])]
    dense_sizes: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 32)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Theorem1Args {
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.25, 0.5, 1.0])]
    taus: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 256, 1024, 4096])]
    ms: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Theorem2Args {
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.25, 0.5, 1.0])]
    taus: Vec<f64>,
    #[arg(long, default_value_t = 4096)]
    m: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 1000)]
    projections: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Comma-separated subset of checks.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// Perturb the dense oracle by this amount (suite self-test).
    #[arg(long, hide = true, default_value_t = 0.0)]
    inject_oracle_fault: f64,
}

#[derive(Args)]
struct GenerateArgs {
    /// two-cluster or cora-like.
    kind: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A failed command and its exit status.
#[derive(Debug)]
enum Failure {
    Verify(String),
    Usage(String),
    Diverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verify(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Verify(m) | Failure::Usage(m) | Failure::Diverged(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. } | Error::NonFinite(_) => Failure::Diverged(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn emit_csv(out: Option<&Path>, csv: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_file(p, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let settings = RunSettings::resolve(
        args.config.as_deref(),
        args.data.as_deref(),
        args.out.as_deref(),
        args.seed,
        &args.overrides,
    )?;
    let graph = load_dataset(&settings.data)?;
    fs::create_dir_all(&settings.out).map_err(|e| io_failure(&settings.out, e))?;
    write_file(&settings.out.join("manifest.txt"), &settings.manifest())?;

    let metrics_path = settings.out.join("metrics.txt");
    let mut metrics = fs::File::create(&metrics_path).map_err(|e| io_failure(&metrics_path, e))?;
    let mut write_err = None;
    let outcome = train_with(&graph, &settings.config, |e| {
        if write_err.is_none() {
            if let Err(err) = writeln!(metrics, "{}", e.metrics_line()) {
                write_err = Some(err);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(io_failure(&metrics_path, e));
    }
    let outcome = outcome?;
    let record = serde_json::to_string_pretty(&outcome.record).map_err(|e| Failure::Usage(e.to_string()))?;
    write_file(&settings.out.join("record.json"), &record)?;
    let saved = SavedModel {
        config: settings.config.clone(),
        model: outcome.model,
    };
    let model = serde_json::to_string(&saved).map_err(|e| Failure::Usage(e.to_string()))?;
    write_file(&settings.out.join("model.json"), &model)?;
    let r = &outcome.record;
    println!(
        "best_epoch={} best_valid={} best_test={} out={}",
        r.best_epoch.map_or("none".into(), |e| e.to_string()),
        r.best_valid.map_or("none".into(), |v| v.to_string()),
        r.best_test.map_or("none".into(), |v| v.to_string()),
        settings.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let split: SplitTag = args.split.parse()?;
    if matches!(split, SplitTag::None) {
        return Err(Failure::Usage("split must be train, valid or test".into()));
    }
    let text = fs::read_to_string(&args.model).map_err(|e| io_failure(&args.model, e))?;
    let saved: SavedModel =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", args.model.display())))?;
    let metric: Metric = match &args.metric {
        Some(m) => m.parse()?,
        None => saved.config.metric,
    };
    let mut graph = load_dataset(&args.data)?;
    graph.split = resolve_split(&graph, saved.config.seed)?;
    let value = evaluate(&saved.model, &graph, &saved.config, split, metric)?;
    println!("split={} metric={metric} value={value}", split.as_str());
    Ok(())
}

fn cmd_bench(cmd: BenchCommand) -> Result<(), Failure> {
    match cmd {
        BenchCommand::Scaling(a) => {
            let cfg = ScalingConfig {
                kernelized_sizes: a.sizes,
                dense_sizes: a.dense_sizes,
                d: a.d,
                m: a.m,
                repeats: a.repeats,
                seed: a.seed,
                ..ScalingConfig::default()
            };
            let report = scaling_benchmark(&cfg)?;
            emit_csv(a.out.as_deref(), &report.to_csv())?;
            for method in [Method::Kernelized, Method::Dense] {
                if let Ok(slope) = report.time_slope(method) {
                    eprintln!("{method} time slope {slope:.3}");
                }
            }
        }
        BenchCommand::Theorem1(a) => {
            let cfg = TheoremSweepConfig {
                taus: a.taus,
                ms: a.ms,
                r: a.r,
                trials: a.trials,
                seed: a.seed,
                ..TheoremSweepConfig::default()
            };
            let table = theorem_sweep(&cfg)?;
            emit_csv(a.out.as_deref(), &table.to_csv())?;
            for (tau, ok) in table.nonincreasing_in_m() {
                eprintln!("tau={tau} error nonincreasing in m: {ok}");
            }
            for (m, ok) in table.nondecreasing_as_tau_shrinks() {
                eprintln!("m={m} error nondecreasing as tau shrinks: {ok}");
            }
        }
        BenchCommand::Theorem2(a) => {
            let cfg = ConvergenceConfig {
                taus: a.taus,
                m: a.m,
                trials: a.trials,
                projections: a.projections,
                seed: a.seed,
            };
            let table = gumbel_convergence_sweep(&five_way_problem(), &cfg)?;
            emit_csv(a.out.as_deref(), &table.to_csv())?;
        }
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let opts = VerifyOptions {
        only: args.only,
        oracle_fault: args.inject_oracle_fault,
    };
    let report = run_suite(&opts)?;
    print!("{}", report.table());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verify(format!("failed checks: {}", report.failures().join(", "))))
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Failure> {
    let graph = match args.kind.as_str() {
        "two-cluster" => two_cluster(&TwoClusterConfig::default(), args.seed)?,
        "cora-like" => cora_like(&CoraLikeConfig::default(), args.seed)?,
        other => {
            return Err(Failure::Usage(format!(
                "unknown dataset kind `{other}` (expected two-cluster or cora-like)"
            )))
        }
    };
    save_dataset(&graph, &args.out)?;
    println!(
        "wrote {} nodes, {} arcs to {}",
        graph.nodes(),
        graph.edges.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(c) => cmd_bench(c),
        Command::Verify(a) => cmd_verify(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
