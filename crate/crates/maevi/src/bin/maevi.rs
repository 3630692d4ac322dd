use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use maevi::cli::{
    cmd_filter, cmd_gen, cmd_interp, cmd_train, cmd_voxelize, eval_table, PipelineConfig,
};

/// Motion-aware event-based video frame interpolation pipeline.
#[derive(Parser)]
#[command(name = "maevi", version, about)]
struct Cli {
    /// Plain-text key=value config file (defaults for all settings).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// RNG seed; overrides the config file's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Extra key=value overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event dataset from a scene description.
    Gen {
        /// Scene config file.
        scene: PathBuf,
        /// Number of samples.
        #[arg(short, default_value_t = 1)]
        n: usize,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxelize one sample's event streams into a binary dump.
    Voxelize {
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the moving-region and loss filters of one sample as images.
    Filter {
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpolate the middle frame of one sample.
    Interp {
        checkpoint: PathBuf,
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset directory.
    Train {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset; prints a tab-separated table.
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set {kv:?} is not KEY=VALUE"))?;
        cfg.apply(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("MAEVI_THREADS") {
        let n: usize = threads
            .parse()
            .context("MAEVI_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing thread pool")?;
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Gen { scene, n, out } => cmd_gen(scene, *n, cfg.train.seed, out)?,
        Command::Voxelize { sample, out } => {
            cmd_voxelize(sample, cfg.model.encoder.n_time_bins, out)?
        }
        Command::Filter { sample, out } => {
            cmd_filter(sample, cfg.model.encoder.n_time_bins, out)?
        }
        Command::Interp {
            checkpoint,
            sample,
            out,
        } => cmd_interp(checkpoint, sample, &cfg, out)?,
        Command::Train { data, out } => cmd_train(data, &cfg, out)?,
        Command::Eval { checkpoint, data } => {
            print!("{}", eval_table(checkpoint, data, &cfg)?)
        }
    }
    Ok(())
}
