mod commands;
mod config;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use morphome::encoding::ArchVariant;

use crate::commands::{Ctx, MissingDependency, NumericalFailure};
use crate::config::{ExperimentConfig, SyntheticConfig};
use crate::store::Layout;

#[derive(Parser, Debug)]
#[command(name = "morphome", version, about = "Train and evaluate re-inflection models over paradigm data")]
struct Cli {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Restrict to a condition, as a fraction (0.1) or a directory name (10L).
    #[arg(long, global = true)]
    condition: Vec<String>,
    /// Restrict to a variant, e.g. FEATURE_GEOMETRIC.
    #[arg(long, global = true)]
    variant: Vec<String>,
    /// Override the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker processes for training.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    /// Generate the corpus instead of reading a paradigm file.
    #[arg(long, global = true)]
    synthetic: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Sample lemmas, split them and write instance files.
    Prepare,
    /// Train every pending run of the grid.
    Train {
        #[arg(long, hide = true)]
        worker: Option<String>,
    },
    /// Decode the test set of every trained run.
    Predict,
    /// Accuracy and paradigm-shape reports.
    Eval {
        /// Also cluster each run's cells separately.
        #[arg(long)]
        per_run: bool,
    },
    /// Score the nonce-verb stimuli.
    Wug,
    /// Mean and SD of every metric across runs.
    Report,
}

fn parse_condition(s: &str) -> anyhow::Result<f64> {
    let c = match s.strip_suffix('L') {
        Some(pct) => pct.parse::<f64>().map(|p| p / 100.0),
        None => s.parse::<f64>(),
    }
    .with_context(|| format!("bad condition {:?}", s))?;
    if !(0.0..=1.0).contains(&c) {
        bail!("condition {} is not a fraction", s);
    }
    Ok(c)
}

fn context(cli: &Cli) -> anyhow::Result<Ctx> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if cli.synthetic => ExperimentConfig::default(),
        None => bail!("no --config given; pass one or use --synthetic"),
    };
    if cli.synthetic && cfg.synthetic.is_none() {
        cfg.synthetic = Some(SyntheticConfig::default());
    }
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    if let Ok(out) = std::env::var("MORPHOME_OUT") {
        cfg.output_dir = PathBuf::from(out);
    }
    cfg.validate()?;
    let conditions = if cli.condition.is_empty() {
        cfg.conditions.clone()
    } else {
        cli.condition.iter().map(|s| parse_condition(s)).collect::<anyhow::Result<_>>()?
    };
    let variants = if cli.variant.is_empty() {
        cfg.variants.clone()
    } else {
        cli.variant.iter().map(|s| s.parse::<ArchVariant>().map_err(|e| anyhow::anyhow!("{}", e))).collect::<anyhow::Result<_>>()?
    };
    let layout = Layout { root: cfg.output_dir.clone() };
    Ok(Ctx { cfg, layout, conditions, variants, parallel: cli.parallel.max(1) })
}

/// Global flags to hand to worker processes.
fn forward_args(cli: &Cli) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(p) = &cli.config {
        out.extend(["--config".to_string(), p.display().to_string()]);
    }
    if let Some(s) = cli.seed {
        out.extend(["--seed".to_string(), s.to_string()]);
    }
    if cli.synthetic {
        out.push("--synthetic".to_string());
    }
    out
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let ctx = context(cli)?;
    match &cli.command {
        Cmd::Prepare => commands::prepare(&ctx),
        Cmd::Train { worker } => commands::train(&ctx, worker.as_deref(), &forward_args(cli)),
        Cmd::Predict => commands::predict(&ctx),
        Cmd::Eval { per_run } => commands::eval(&ctx, *per_run),
        Cmd::Wug => commands::wug(&ctx),
        Cmd::Report => commands::report(&ctx),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<MissingDependency>() {
            return 2;
        }
        if cause.is::<NumericalFailure>() {
            return 3;
        }
        if let Some(err) = cause.downcast_ref::<morphome::Error>() {
            if matches!(err, morphome::Error::Diverged { .. } | morphome::Error::Num(_)) {
                return 3;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
