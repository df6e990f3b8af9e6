//! Reverse-warp training and simulated-incomplete-image export.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use acdg::raster::save_png_rgb;
use acdg::synthworld::Manifest;
use acdg::warpkit::{garment_pairs, make_simulated_incomplete, train_reverse_warp, ReverseWarp, ReverseWarpConfig};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "warpkit", about = "Reverse-warp network and incomplete images")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train U on every garment of a synthworld dataset.
    TrainU {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write s^i for each dataset sample plus an index.json.
    BuildSi {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        u_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    acdg::telemetry::init();
    match Cli::parse().cmd {
        Cmd::TrainU { dataset, out, steps, seed } => {
            let manifest = Manifest::load(&dataset)?;
            let mut pairs = Vec::new();
            for r in &manifest.records {
                let (_, dressed) = manifest.realize(r)?;
                pairs.extend(garment_pairs(&dressed)?);
            }
            tracing::info!(pairs = pairs.len(), steps, "training reverse warp");
            let config = ReverseWarpConfig { steps, seed, ..Default::default() };
            let (net, curve) = train_reverse_warp(&pairs, &config)?;
            let extra = BTreeMap::from([("final_loss".to_string(), format!("{:.6}", curve.mean(steps.saturating_sub(50)..steps)))]);
            net.save(&out, &extra)?;
            tracing::info!(path = %out.display(), "checkpoint written");
        }
        Cmd::BuildSi { dataset, u_ckpt, out } => {
            let manifest = Manifest::load(&dataset)?;
            let u = ReverseWarp::load(&u_ckpt)?;
            fs::create_dir_all(&out)?;
            let mut index = Vec::new();
            for r in &manifest.records {
                let (_, dressed) = manifest.realize(r)?;
                let si = make_simulated_incomplete(&dressed, &u)?;
                let file = format!("{}_si.png", r.id);
                save_png_rgb(&si.image.to_rgb(), &out.join(&file))?;
                index.push(json!({ "id": r.id, "file": file, "skin_fill": si.skin_fill, "outfit_digest": si.outfit_digest }));
            }
            fs::write(out.join("index.json"), serde_json::to_string_pretty(&index)?)?;
            tracing::info!(samples = index.len(), dir = %out.display(), "simulated incomplete images written");
        }
    }
    Ok(())
}
