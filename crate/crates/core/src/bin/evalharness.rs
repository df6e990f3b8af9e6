//! Held-out evaluation and the ablation battery.

use std::path::PathBuf;

use acdg::evalharness::{evaluate, run_ablation, AblationConfig, HeldOutConfig};
use acdg::inferpipe::ModelBundle;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "evalharness", about = "Evaluate try-on checkpoints")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train missing runs, evaluate every variant and seed, write report.json and grids.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fail instead of training runs whose checkpoint is absent.
        #[arg(long)]
        no_train: bool,
    },
    /// Evaluate one checkpoint directory on the default held-out set.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
    },
}

fn main() -> anyhow::Result<()> {
    acdg::telemetry::init();
    match Cli::parse().cmd {
        Cmd::Ablate { config, out, no_train } => {
            let mut cfg = AblationConfig::load(&config)?;
            if no_train {
                cfg.ablation.train_missing = false;
            }
            let report = run_ablation(&cfg, &out)?;
            for (v, r) in &report.variants {
                for (m, iv) in &r.aggregates {
                    println!("{v:<13} {m:<17} {:>10.4} [{:.4}, {:.4}]", iv.mean, iv.lo, iv.hi);
                }
            }
            for c in &report.comparisons {
                let verdict = if c.acdg_better { "acdg better" } else { "not separated" };
                println!("{} vs {}: {verdict}", c.metric, c.baseline);
            }
            if let Some(w) = report.zoom_win_rate {
                println!("zoom win rate vs no-zoom: {:.1}%", 100.0 * w);
            }
        }
        Cmd::Eval { ckpt, count } => {
            let bundle = ModelBundle::load(&ckpt)?;
            let report = evaluate(&bundle, &HeldOutConfig { count, ..Default::default() })?;
            println!("{}", serde_json::to_string_pretty(&report.aggregates)?);
        }
    }
    Ok(())
}
