//! Denoiser training for one ablation variant.

use std::path::PathBuf;

use acdg::diffcore::{train_run, TrainSetup, Variant};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "diffcore", about = "Control-conditioned latent diffusion training")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a denoiser and write `<out_dir>/<variant>-s<seed>/`.
    Train {
        /// TOML file with `autoencoder`, `out_dir`, optional `reverse_warp`
        /// and `[train]`, `[data]`, `[schedule]`, `[denoiser]` tables.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "acdg")]
        variant: Variant,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> anyhow::Result<()> {
    acdg::telemetry::init();
    match Cli::parse().cmd {
        Cmd::Train { config, variant, seed } => {
            let setup = TrainSetup::load(&config)?;
            let seed = seed.unwrap_or(setup.train.seed);
            let (dir, report) = train_run(&setup, variant, seed)?;
            let n = report.losses.values.len();
            tracing::info!(
                dir = %dir.display(),
                seconds = report.seconds,
                loss = report.losses.mean(n.saturating_sub(100)..n),
                "run written"
            );
        }
    }
    Ok(())
}
