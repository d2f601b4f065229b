//! Command-line surface of the LiDAR realism pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use config::*;

#[derive(Parser)]
#[command(
    name = "lidar-realism",
    about = "Learned realism metric for LiDAR point clouds: dataset generation, training, scoring, baselines, and up-sampling",
    version
)]
struct Cli {
    /// Run configuration (TOML, one table per command).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materializes a synthetic dataset registry with train/val/test splits.
    Generate,
    /// Trains the realism metric and writes a checkpoint plus accuracy history.
    TrainMetric {
        /// Overrides the gradient-reversal factor.
        #[arg(long)]
        lambda: Option<f64>,
        /// Overrides the step count.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Trains once per lambda in the configured list.
    SweepLambda,
    /// Scores scenes with a trained checkpoint.
    Score {
        /// Also writes per-query score rows.
        #[arg(long)]
        per_query: bool,
        /// Also writes a colored PLY per scene.
        #[arg(long)]
        ply: bool,
    },
    /// Exports latent features with category/dataset labels.
    ExportFeatures,
    /// Computes Chamfer/MAE/MSE between aligned prediction and target scenes.
    EvalBaselines,
    /// Runs the project/subsample/up-sample/back-project pipeline.
    Upsample {
        /// Overrides the up-sampling mode.
        #[arg(long)]
        mode: Option<String>,
        /// Overrides the vertical factor.
        #[arg(long)]
        f_up: Option<usize>,
        /// Checkpoint for the learned modes.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Trains the SR generator (and discriminator in gan mode).
    TrainUpsampler {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
    },
}

fn require_config(cli: &Cli) -> Result<&PathBuf> {
    match &cli.config {
        Some(p) => Ok(p),
        None => bail!("this command needs --config pointing at a TOML run configuration"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.clone();
    match &cli.command {
        Command::Generate => {
            let mut cfg: GenerateConfig = load_section(require_config(&cli)?, "generate")?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            commands::cmd_generate(cfg, &out)
        }
        Command::TrainMetric { lambda, steps } => {
            let mut cfg: TrainMetricConfig = load_section(require_config(&cli)?, "train-metric")?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(l) = lambda {
                cfg.lambda = *l;
            }
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            commands::cmd_train_metric(cfg, &out)
        }
        Command::SweepLambda => {
            let mut cfg: SweepLambdaConfig = load_section(require_config(&cli)?, "sweep-lambda")?;
            if let Some(seed) = cli.seed {
                cfg.base.seed = seed;
            }
            commands::cmd_sweep_lambda(cfg, &out)
        }
        Command::Score { per_query, ply } => {
            let mut cfg: ScoreConfig = load_section(require_config(&cli)?, "score")?;
            cfg.per_query |= per_query;
            cfg.ply |= ply;
            commands::cmd_score(cfg, &out)
        }
        Command::ExportFeatures => {
            let cfg: ExportFeaturesConfig =
                load_section(require_config(&cli)?, "export-features")?;
            commands::cmd_export_features(cfg, &out)
        }
        Command::EvalBaselines => {
            let cfg: EvalBaselinesConfig =
                load_section(require_config(&cli)?, "eval-baselines")?;
            commands::cmd_eval_baselines(cfg, &out)
        }
        Command::Upsample {
            mode,
            f_up,
            checkpoint,
        } => {
            let mut cfg: UpsampleCmdConfig = load_section(require_config(&cli)?, "upsample")?;
            if let Some(m) = mode {
                cfg.mode = m.clone();
            }
            if let Some(f) = f_up {
                cfg.f_up = *f;
            }
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint.clone();
            }
            commands::cmd_upsample(cfg, &out)
        }
        Command::TrainUpsampler { mode, steps } => {
            let mut cfg: TrainUpsamplerConfig =
                load_section(require_config(&cli)?, "train-upsampler")?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(m) = mode {
                cfg.mode = m.clone();
            }
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            commands::cmd_train_upsampler(cfg, &out)
        }
    }
}

/// Exit codes: 0 success, 1 usage/config error, 2 runtime failure
/// (divergence, I/O).
fn exit_code_of(err: &anyhow::Error) -> u8 {
    use lidar_realism::Error as CoreError;
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Io(_) | CoreError::NonFinite { .. } => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version output is a success, usage errors are not
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_of(&e))
        }
    }
}
