use clap::{Args, Parser, Subcommand};
use sembeam::dataset;
use sembeam::features::{FeatureId, FeatureSet};
use sembeam::pipeline::{self, PipelineConfig, PipelineError, TaskKind};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sembeam", version, about = "Semantics-aided beam and blockage prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON); defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TaskArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_parser = parse_task)]
    task: TaskKind,
    /// Run directory for artifacts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, render and label a dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Floating forward feature selection for one task.
    Select {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        task: TaskArgs,
        /// Training epochs per evaluated feature set.
        #[arg(long)]
        epochs: Option<usize>,
        /// Feature kept in every candidate set (repeatable).
        #[arg(long = "pin-feature", value_parser = parse_feature)]
        pin_feature: Vec<FeatureId>,
        #[arg(long)]
        vmax: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Train the final predictor for one task and save it.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Comma-separated features; the selection in the run directory when absent.
        #[arg(long, value_parser = parse_features)]
        features: Option<FeatureSet>,
    },
    /// Score a saved predictor on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long)]
        horizon: Option<usize>,
        /// Comma-separated Top-G sizes.
        #[arg(long = "g-list", value_delimiter = ',')]
        g_list: Option<Vec<usize>>,
    },
    /// Collect run artifacts into report.json and metrics.csv.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: PipelineError| e.to_string())
}

fn parse_feature(s: &str) -> Result<FeatureId, String> {
    FeatureId::parse(s).ok_or_else(|| format!("unknown feature {s:?}"))
}

fn parse_features(s: &str) -> Result<FeatureSet, String> {
    s.split(',').map(parse_feature).collect::<Result<Vec<_>, _>>().map(FeatureSet::new)
}

fn load_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.dataset.scene.seed = seed;
    }
    Ok(cfg)
}

fn load_dataset(dir: &Path) -> Result<dataset::Dataset, PipelineError> {
    Ok(dataset::read(dir)?)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Generate { common, out } => {
            let cfg = load_config(&common)?;
            let manifest = pipeline::cmd_generate(&cfg.dataset, &out)?;
            println!("{} samples written to {}", manifest.samples, out.display());
        }
        Command::Select { common, task, epochs, pin_feature, vmax, horizon } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.selection.epochs = e;
            }
            if !pin_feature.is_empty() {
                cfg.selection.pinned = pin_feature;
            }
            if vmax.is_some() {
                cfg.selection.v_max = vmax;
            }
            if horizon.is_some() {
                cfg.selection.blockage_horizon = horizon;
            }
            let ds = load_dataset(&task.dataset)?;
            pipeline::write_run_info(&task.out, &cfg, &ds)?;
            print_json(&pipeline::cmd_select(&ds, task.task, &cfg, &task.out)?);
        }
        Command::Train { common, task, epochs, horizon, features } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let features = match features {
                Some(f) => f,
                None => pipeline::read_selection(&task.out, task.task)?.features,
            };
            let ds = load_dataset(&task.dataset)?;
            pipeline::write_run_info(&task.out, &cfg, &ds)?;
            let info = pipeline::cmd_train(&ds, &features, task.task, horizon, &cfg, &task.out)?;
            println!("trained {} on {}: validation accuracy {:.4}", task.task, info.features, info.val_accuracy);
        }
        Command::Eval { common, task, horizon, g_list } => {
            let mut cfg = load_config(&common)?;
            if let Some(g) = g_list {
                cfg.g_list = g;
            }
            let ds = load_dataset(&task.dataset)?;
            print_json(&pipeline::cmd_eval(&ds, task.task, horizon, &cfg, &task.out)?);
        }
        Command::Report { out } => {
            let report = pipeline::cmd_report(&out)?;
            for m in &report.metrics {
                println!("{} {:.4} (n = {})", m.metric, m.value, m.n);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
