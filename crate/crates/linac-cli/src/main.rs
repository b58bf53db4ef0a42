//! `linac` — command-line front end for keyed input-transform experiments:
//! dataset generation, per-image implicit-network fitting, defended
//! classifier training, white/black-box attacks, key search, robust-accuracy
//! reports, and hyperparameter sweeps.
//!
//! Every command is a deterministic function of its flags and config file:
//! reruns produce byte-identical artifacts except for the `*.meta.json`
//! sidecars, which carry a timestamp. Parallelism never changes results —
//! set it with `--workers` or the `LINAC_WORKERS` env var.

mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use linac_core::error::{Error, Result};

use crate::commands::{FitRequest, SweepParam};
use crate::config::Preset;

#[derive(Parser)]
#[command(
    name = "linac",
    version,
    about = "Keyed input-transform defence experiments: fit, train, attack, report"
)]
struct Cli {
    /// Worker threads (overrides LINAC_WORKERS; default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the keyed procedural dataset to disk.
    Synth {
        /// Generator key.
        #[arg(long, allow_negative_numbers = true)]
        key: i64,
        /// Training images.
        #[arg(long, default_value_t = 256)]
        train: usize,
        /// Test images.
        #[arg(long, default_value_t = 64)]
        test: usize,
        /// "standard" (32x32) or "small" (16x16).
        #[arg(long, default_value = "standard")]
        size: String,
        /// Output directory (gets train/ and test/).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one implicit network to an image and write the parameter bundle
    /// plus its loss trace.
    Fit {
        /// LNT1 tensor ([rows, cols, 3]) or CIFAR-10 .bin batch file.
        #[arg(long)]
        image: PathBuf,
        /// Record index for .bin files.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Private key seeding the fit.
        #[arg(long, allow_negative_numbers = true)]
        key: i64,
        /// Hyperparameter preset the flags below override.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Fitting epochs over the pixel set.
        #[arg(long)]
        epochs: Option<usize>,
        /// Pixels per optimizer step.
        #[arg(long)]
        batch: Option<usize>,
        /// Hidden layers.
        #[arg(long)]
        layers: Option<usize>,
        /// Units per hidden layer.
        #[arg(long)]
        width: Option<usize>,
        /// Positional-encoding frequencies.
        #[arg(long)]
        freqs: Option<usize>,
        /// Hidden layer whose activations form the output image; must be
        /// below --layers unless --reconstruction is set.
        #[arg(long)]
        repr_layer: Option<usize>,
        /// Initial learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Final learning rate of the cosine schedule.
        #[arg(long)]
        floor: Option<f64>,
        /// Emit the fitted network's colour output instead of hidden
        /// activations.
        #[arg(long)]
        reconstruction: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a keyed transform to a saved image bundle.
    Transform {
        /// Directory holding images.lnt + labels.json (e.g. synth output's
        /// train/ or test/).
        #[arg(long)]
        dataset: PathBuf,
        /// Default key for the transform (its config may override).
        #[arg(long, allow_negative_numbers = true)]
        key: Option<i64>,
        /// Transform JSON (a transform block: kind, key, arch, fit fields).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a (possibly defended) classifier per an experiment config.
    Train {
        /// Experiment JSON (dataset, transform, classifier blocks).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the config's attack list against a trained checkpoint and emit
    /// the robust-accuracy report.
    Attack {
        /// Experiment JSON (dataset, transform, attacks blocks).
        #[arg(long)]
        config: PathBuf,
        /// `linac train` output directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank candidate private keys by defended accuracy on an evaluation
    /// batch.
    Bruteforce {
        /// Experiment JSON (dataset + transform blocks).
        #[arg(long)]
        config: PathBuf,
        /// `linac train` output directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of wrong keys to try alongside the true one.
        #[arg(long, default_value_t = 200)]
        keys: usize,
        /// Evaluation batch size.
        #[arg(long, default_value_t = 100)]
        batch: usize,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge per-example masks and emit the aggregated report.
    Report {
        /// masks.json files (clean masks must agree).
        #[arg(long, required = true, num_args = 1..)]
        masks: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Threat-model norm recorded in the metadata.
        #[arg(long, default_value = "linf")]
        norm: String,
        /// Threat-model epsilon recorded in the metadata.
        #[arg(long, default_value_t = 8.0 / 255.0)]
        epsilon: f64,
        /// Model identifier recorded in the metadata.
        #[arg(long, default_value = "merged")]
        model_id: String,
    },
    /// Re-run the transform+train+attack pipeline across values of one
    /// transform hyperparameter and tabulate clean/robust accuracy.
    Sweep {
        /// Experiment JSON with a "linac" transform block as the base.
        #[arg(long)]
        config: PathBuf,
        /// Which hyperparameter to vary.
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Values to sweep, comma separated (e.g. 0,1,2,3,4).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_workers(flag: Option<usize>) -> Result<()> {
    let n = flag.or_else(|| {
        std::env::var("LINAC_WORKERS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::InvalidArgument("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_workers(cli.workers)?;
    match cli.command {
        Command::Synth {
            key,
            train,
            test,
            size,
            out,
        } => commands::cmd_synth(key, train, test, &size, &out),
        Command::Fit {
            image,
            index,
            key,
            preset,
            epochs,
            batch,
            layers,
            width,
            freqs,
            repr_layer,
            lr,
            floor,
            reconstruction,
            out,
        } => commands::cmd_fit(FitRequest {
            image,
            index,
            key,
            preset,
            epochs,
            batch,
            layers,
            width,
            freqs,
            repr_layer,
            lr,
            floor,
            reconstruction,
            out,
        }),
        Command::Transform {
            dataset,
            key,
            config,
            out,
        } => commands::cmd_transform(&dataset, key, &config, &out),
        Command::Train { config, out } => commands::cmd_train(&config, out.as_deref()),
        Command::Attack {
            config,
            checkpoint,
            out,
        } => commands::cmd_attack(&config, &checkpoint, out.as_deref()),
        Command::Bruteforce {
            config,
            checkpoint,
            keys,
            batch,
            out,
        } => commands::cmd_bruteforce(&config, &checkpoint, keys, batch, out.as_deref()),
        Command::Report {
            masks,
            out,
            norm,
            epsilon,
            model_id,
        } => commands::cmd_report(&masks, &out, &norm, epsilon, &model_id).map(|_| ()),
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => commands::cmd_sweep(&config, param, &values, out.as_deref()),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
