//! `cartographer`: cocoa mapping from multispectral scenes, one
//! pipeline stage per subcommand.
//!
//! Configuration comes from a JSON file; command-line flags override
//! individual fields (flag > config > default). Failures print a
//! machine-readable `{"error": ...}` line on stderr and exit nonzero.

use std::path::PathBuf;

use anyhow::{ensure, Context, Result};
use clap::{Parser, Subcommand};

use cartographer::commands;
use cartographer::config::PipelineConfig;
use cartographer::gradcheck;

#[derive(Parser)]
#[command(
    name = "cartographer",
    version,
    about = "Cocoa mapping from multispectral scenes: train, predict, aggregate, calibrate, and report"
)]
struct Cli {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads. Falls back to CARTOGRAPHER_THREADS, then to one
    /// thread per core; 1 guarantees bitwise-deterministic output.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene stack with full ground truth.
    GenSynthetic {
        /// Scene spec file (JSON); defaults cover a 96x96 test bed.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Directory the scene and its ground truth are written into.
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's generator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the segmentation ensemble.
    Train {
        /// Ablation: train without canopy-height injection.
        #[arg(long)]
        no_height: bool,
        /// Override the number of training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override iterations per epoch.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the batch size.
        #[arg(long)]
        batch: Option<usize>,
        /// Override the Adam learning rate.
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Override the hidden width of every member.
        #[arg(long)]
        width: Option<usize>,
        /// Override the member seeds (comma-separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Train the canopy-height regressor from sparse samples.
    TrainHeight {
        /// Override the number of training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override iterations per epoch.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the Adam learning rate.
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Run every ensemble member over every selected scene.
    Predict {
        /// Override the inference tile edge length.
        #[arg(long)]
        tile: Option<usize>,
    },
    /// Average member predictions into a confidence map.
    Aggregate {
        /// Override the minimum clear observations per pixel.
        #[arg(long)]
        min_contributors: Option<usize>,
    },
    /// Pick the F1-optimal threshold on held-out pixels.
    Calibrate {
        /// Override the threshold grid step.
        #[arg(long)]
        grid_step: Option<f64>,
    },
    /// Pixel metrics (and site metrics, when sites are configured) on
    /// the held-out split.
    Eval {
        /// Decision threshold; otherwise calibrated value, then 0.65.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Per-member cocoa area with a Student-t confidence interval.
    Area {
        /// Decision threshold; otherwise calibrated value, then 0.65.
        #[arg(long)]
        threshold: Option<f64>,
        /// Override the confidence level, e.g. 0.95.
        #[arg(long)]
        ci_level: Option<f64>,
    },
    /// Cocoa cover and deforestation share per named zone.
    Overlay {
        /// Decision threshold; otherwise calibrated value, then 0.65.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Temporal-mean NDVI composite over the selected scenes.
    Ndvi {
        /// Restrict the composite to predicted-cocoa pixels.
        #[arg(long)]
        cocoa_only: bool,
        /// Decision threshold for --cocoa-only.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck,
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("CARTOGRAPHER_THREADS") {
            Ok(s) => Some(
                s.parse::<usize>()
                    .context("CARTOGRAPHER_THREADS must be a positive integer")?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        ensure!(n >= 1, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing the worker pool")?;
    }
    Ok(())
}

/// Loads the config, applies the overrides, and revalidates.
fn load_config(path: Option<&PathBuf>, apply: impl FnOnce(&mut PipelineConfig)) -> Result<PipelineConfig> {
    let path = path.context("--config is required for this command")?;
    let mut cfg = PipelineConfig::load(path)?;
    apply(&mut cfg);
    cfg.validate().context("config invalid after flag overrides")?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    let config = cli.config.as_ref();
    match cli.command {
        Command::GenSynthetic { spec, out, seed } => {
            commands::cmd_gen_synthetic(spec.as_deref(), &out, seed)
        }
        Command::Train {
            no_height,
            epochs,
            iterations,
            batch,
            learning_rate,
            width,
            seeds,
        } => {
            let cfg = load_config(config, |c| {
                if no_height {
                    c.model.use_height = false;
                }
                if let Some(v) = epochs {
                    c.schedule.epochs = v;
                }
                if let Some(v) = iterations {
                    c.schedule.iterations_per_epoch = v;
                }
                if let Some(v) = batch {
                    c.schedule.batch_size = v;
                }
                if let Some(v) = learning_rate {
                    c.schedule.learning_rate = v;
                }
                if let Some(v) = width {
                    c.model.hidden_width = v;
                }
                if let Some(v) = seeds {
                    c.seeds = v;
                }
            })?;
            commands::cmd_train(&cfg)
        }
        Command::TrainHeight {
            epochs,
            iterations,
            learning_rate,
        } => {
            let cfg = load_config(config, |c| {
                if let Some(v) = epochs {
                    c.schedule.epochs = v;
                }
                if let Some(v) = iterations {
                    c.schedule.iterations_per_epoch = v;
                }
                if let Some(v) = learning_rate {
                    c.schedule.learning_rate = v;
                }
            })?;
            commands::cmd_train_height(&cfg)
        }
        Command::Predict { tile } => {
            let cfg = load_config(config, |c| {
                if let Some(v) = tile {
                    c.tile = v;
                }
            })?;
            commands::cmd_predict(&cfg)
        }
        Command::Aggregate { min_contributors } => {
            let cfg = load_config(config, |c| {
                if let Some(v) = min_contributors {
                    c.min_contributors = v;
                }
            })?;
            commands::cmd_aggregate(&cfg)
        }
        Command::Calibrate { grid_step } => {
            let cfg = load_config(config, |c| {
                if let Some(v) = grid_step {
                    c.grid_step = v;
                }
            })?;
            commands::cmd_calibrate(&cfg)
        }
        Command::Eval { threshold } => {
            let cfg = load_config(config, |c| {
                if threshold.is_some() {
                    c.threshold = threshold;
                }
            })?;
            commands::cmd_eval(&cfg)
        }
        Command::Area {
            threshold,
            ci_level,
        } => {
            let cfg = load_config(config, |c| {
                if threshold.is_some() {
                    c.threshold = threshold;
                }
                if let Some(v) = ci_level {
                    c.ci_level = v;
                }
            })?;
            commands::cmd_area(&cfg)
        }
        Command::Overlay { threshold } => {
            let cfg = load_config(config, |c| {
                if threshold.is_some() {
                    c.threshold = threshold;
                }
            })?;
            commands::cmd_overlay(&cfg)
        }
        Command::Ndvi {
            cocoa_only,
            threshold,
        } => {
            let cfg = load_config(config, |c| {
                if threshold.is_some() {
                    c.threshold = threshold;
                }
            })?;
            commands::cmd_ndvi(&cfg, cocoa_only)
        }
        Command::Gradcheck => {
            let checks = gradcheck::run_all();
            print!("{}", gradcheck::render_table(&checks));
            let failed: Vec<_> = checks.iter().filter(|c| !c.pass()).collect();
            ensure!(
                failed.is_empty(),
                "gradient check failed for: {}",
                failed
                    .iter()
                    .map(|c| c.layer)
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let payload = serde_json::json!({ "error": format!("{err:#}") });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
