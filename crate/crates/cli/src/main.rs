use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use streamperf_core::experiment::{self, ExperimentConfig, Variant};
use streamperf_core::featext::EvalMode;
use streamperf_core::pipesim::GridKind;

#[derive(Parser, Debug)]
#[command(name = "streamperf", version, about = "Context-aware streaming perception experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    grid: Option<GridArg>,
    #[arg(long = "latency-scale", global = true)]
    latency_scale: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus.
    Gen {
        /// Replace an existing corpus.
        #[arg(long)]
        force: bool,
    },
    /// Run every configuration on every segment (resumable).
    Sweep {
        /// Discard stored partial runs.
        #[arg(long)]
        force: bool,
    },
    /// Train a policy on the train split.
    Train {
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
    /// Evaluate the trained policy and the baselines on the test split.
    Eval {
        /// Evaluation mode(s); repeat for several. Default: the config's modes.
        #[arg(long, value_enum)]
        mode: Vec<ModeArg>,
    },
    /// Score-space clustering, heatmaps, pareto curve and importances.
    Analyze {
        #[arg(long, value_enum)]
        mode: Vec<ModeArg>,
    },
    /// Time policy inference.
    Bench {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Print the resolved config as JSON.
    Config,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GridArg {
    Default,
    Extended,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    GtCurrent,
    GtPrevious,
    ClosedLoop,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Relative,
    Absolute,
    ClassifyJoint,
    ClassifyIndependent,
    ClassifyJointSingle,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::GtCurrent => EvalMode::GtCurrent,
            ModeArg::GtPrevious => EvalMode::GtPrevious,
            ModeArg::ClosedLoop => EvalMode::ClosedLoop,
        }
    }
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Relative => Variant::Relative,
            VariantArg::Absolute => Variant::Absolute,
            VariantArg::ClassifyJoint => Variant::ClassifyJoint,
            VariantArg::ClassifyIndependent => Variant::ClassifyIndependent,
            VariantArg::ClassifyJointSingle => Variant::ClassifyJointSingle,
        }
    }
}

fn resolve(common: &Common, command: &Command) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &common.output {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(g) = common.grid {
        cfg.grid = match g {
            GridArg::Default => GridKind::Default,
            GridArg::Extended => GridKind::Extended,
        };
    }
    if let Some(l) = common.latency_scale {
        cfg.latency_scale = l;
    }
    match command {
        Command::Train { variant: Some(v) } => cfg.variant = (*v).into(),
        Command::Eval { mode } | Command::Analyze { mode } if !mode.is_empty() => {
            cfg.modes = mode.iter().map(|&m| m.into()).collect();
            cfg.modes.dedup();
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.common.jobs {
        anyhow::ensure!(j > 0, "--jobs must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    let cfg = resolve(&cli.common, &cli.command)?;
    match cli.command {
        Command::Gen { force } => {
            let dir = experiment::cmd_gen(&cfg, force)?;
            println!("corpus written to {}", dir.display());
        }
        Command::Sweep { force } => {
            let ds = experiment::cmd_sweep(&cfg, force)?;
            println!(
                "dataset: {} configurations, {} segments -> {}",
                ds.n_configs(),
                ds.segments.len(),
                cfg.dataset_dir().display()
            );
        }
        Command::Train { .. } => {
            experiment::cmd_train(&cfg)?;
            println!("model written to {}", cfg.model_path().display());
        }
        Command::Eval { .. } => {
            let report = experiment::cmd_eval(&cfg)?;
            for (name, s) in report.rows() {
                println!("{name:<50} S-MOTA {:>7.3}  S-MOTP {:>7.3}", s.smota, s.smotp);
            }
        }
        Command::Analyze { .. } => {
            experiment::cmd_analyze(&cfg)?;
            println!("analysis written to {}", cfg.analysis_dir().display());
        }
        Command::Bench { trials } => {
            let s = experiment::cmd_bench(&cfg, trials)?;
            println!("p50 {:.4} ms  p99 {:.4} ms  mean {:.4} ms over {} trials", s.p50_ms, s.p99_ms, s.mean_ms, s.trials);
        }
        Command::Config => println!("{}", serde_json::to_string_pretty(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STREAMPERF_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
