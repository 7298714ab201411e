//! `lerp`: train, evaluate and inspect rule models from the command line.
//!
//! Log verbosity comes from `LERP_LOG` (`error`, `warn`, `info`, `debug`);
//! the default is `info`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use lerp::checks::{bound_suite, gradient_suite, oracle_suite, SuiteReport};
use lerp::interpret::{dump_lerp_vectors, write_functions, write_rules};
use lerp::util::write_atomic;
use lerp::{evaluate, fit_observed, EpochStats, KnowledgeGraph, Model, Split, TrainConfig, TrainObserver};

#[derive(Parser)]
#[command(name = "lerp", version, about = "Rule learning with logical entity representations")]
struct Cli {
    /// Worker threads for evaluation; defaults to all cores.
    #[arg(long, global = true, env = "LERP_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write per-epoch checkpoints plus a loss log.
    Train(TrainArgs),
    /// Rank a split of the dataset and write a metrics report.
    Evaluate(EvaluateArgs),
    /// Decode the learned rules and LERP functions to text.
    ExtractRules(ExtractArgs),
    /// Write every entity's LERP vector, one entity per line.
    DumpLerp(DumpArgs),
    /// Run the randomized oracle, gradient and operation-bound suites.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.txt, valid.txt and test.txt.
    #[arg(long)]
    data: PathBuf,
    /// JSON training config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints and loss.log.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Path of the JSON report.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Rule listing, sorted by weight within each target relation.
    #[arg(long)]
    out: PathBuf,
    /// LERP function listing; defaults to `<out>.functions`.
    #[arg(long)]
    functions: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// Random graphs for the oracle equivalence suite.
    #[arg(long, default_value_t = 500)]
    oracle_cases: usize,
    /// Random instances for the gradient suite.
    #[arg(long, default_value_t = 100)]
    gradient_cases: usize,
    /// Random rules per graph size for the bound suite.
    #[arg(long, default_value_t = 20)]
    bound_cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LERP_LOG", "info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::ExtractRules(a) => extract(a),
        Command::DumpLerp(a) => dump(a),
        Command::OracleCheck(a) => oracle_check(a),
    }
}

fn load_graph(dir: &Path) -> Result<KnowledgeGraph> {
    KnowledgeGraph::load_dir(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Checkpoints each epoch and keeps the loss log current on disk.
struct Recorder<'a> {
    out: &'a Path,
    start: Instant,
    global_step: usize,
    log: String,
}

impl TrainObserver for Recorder<'_> {
    fn step(&mut self, epoch: usize, _step: usize, loss: f64) {
        self.global_step += 1;
        let wall = self.start.elapsed().as_secs_f64();
        writeln!(self.log, "step={} epoch={epoch} loss={loss:.6} wall={wall:.3}", self.global_step).unwrap();
    }

    fn epoch(&mut self, stats: &EpochStats, model: &Model) -> lerp::Result<()> {
        model.save(&self.out.join(format!("epoch-{:02}.ckpt", stats.epoch)))?;
        let wall = self.start.elapsed().as_secs_f64();
        writeln!(
            self.log,
            "epoch={} mean_loss={:.6} steps={} empty={} wall={wall:.3}",
            stats.epoch, stats.mean_loss, stats.steps, stats.empty_queries
        )
        .unwrap();
        write_atomic(&self.out.join("loss.log"), self.log.as_bytes())?;
        info!(
            "epoch {} loss {:.4} ({:.1}s, {} empty queries)",
            stats.epoch, stats.mean_loss, stats.seconds, stats.empty_queries
        );
        Ok(())
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::from_file(p).with_context(|| format!("reading config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let graph = load_graph(&a.data)?;
    info!(
        "{} entities, {} relations, {} train triplets",
        graph.num_entities(),
        graph.num_raw_relations(),
        graph.train().len()
    );
    let mut recorder = Recorder {
        out: &a.out,
        start: Instant::now(),
        global_step: 0,
        log: String::new(),
    };
    let model = fit_observed(config, &graph, &mut recorder).context("training")?;
    let final_path = a.out.join("final");
    model.save(&final_path)?;
    write_atomic(&a.out.join("loss.log"), recorder.log.as_bytes())?;
    info!("wrote {}", final_path.display());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let graph = load_graph(&a.data)?;
    let model = load_model(&a.ckpt)?;
    let report = evaluate(&model, &graph, a.split)?;
    let json = serde_json::to_string_pretty(&report)?;
    write_atomic(&a.report, json.as_bytes())?;
    print!("{}", report.to_table());
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let functions = a.functions.unwrap_or_else(|| {
        let mut name = a.out.clone().into_os_string();
        name.push(".functions");
        PathBuf::from(name)
    });
    write_rules(&model, &a.out)?;
    write_functions(&model, &functions)?;
    info!("wrote {} and {}", a.out.display(), functions.display());
    Ok(())
}

fn dump(a: DumpArgs) -> Result<()> {
    let graph = load_graph(&a.data)?;
    let model = load_model(&a.ckpt)?;
    dump_lerp_vectors(&model, &graph, &a.out)?;
    Ok(())
}

fn oracle_check(a: OracleArgs) -> Result<()> {
    let reports: [SuiteReport; 3] = [
        oracle_suite(a.oracle_cases, a.seed),
        gradient_suite(a.gradient_cases, a.seed),
        bound_suite(&[10, 20, 40], a.bound_cases, a.seed),
    ];
    for r in &reports {
        println!("{}", r.summary());
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        bail!("suites failed: {}", failed.join(", "));
    }
    Ok(())
}
