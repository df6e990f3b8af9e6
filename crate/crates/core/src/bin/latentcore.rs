//! Autoencoder training and roundtrip degradation reports.

use std::path::PathBuf;

use acdg::latentcore::{central_window, roundtrip_degradation, train_autoencoder, training_corpus, Autoencoder, AutoencoderConfig};
use acdg::raster::{load_rgb, FloatImage};
use acdg::synthworld::WorldConfig;
use anyhow::bail;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "latentcore", about = "Latent autoencoder tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the autoencoder on a procedurally generated corpus.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4000)]
        steps: usize,
        #[arg(long, default_value_t = 300)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "96x64")]
        resolution: String,
    },
    /// Compare native and 2x-upsampled roundtrips of a half-size window.
    Roundtrip {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// `x,y,w,h`; defaults to the central half-size crop.
        #[arg(long)]
        window: Option<String>,
    },
}

fn parse_window(s: &str) -> anyhow::Result<[usize; 4]> {
    let v: Vec<usize> = s.split(',').map(|p| p.trim().parse()).collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, w, h] => Ok([x, y, w, h]),
        _ => bail!("window must be x,y,w,h"),
    }
}

fn main() -> anyhow::Result<()> {
    acdg::telemetry::init();
    match Cli::parse().cmd {
        Cmd::Train { out, steps, count, seed, resolution } => {
            let world = WorldConfig::parse(&resolution)?;
            let corpus = training_corpus(seed, count, &world)?;
            let config = AutoencoderConfig { height: world.height, width: world.width, steps, seed, ..Default::default() };
            tracing::info!(images = corpus.len(), steps, "training autoencoder");
            let (ae, curve) = train_autoencoder(&corpus, &config)?;
            let tail = curve.mean(steps.saturating_sub(50)..steps);
            ae.save(&out, &[("final_loss".to_string(), format!("{tail:.6}"))].into())?;
            tracing::info!(path = %out.display(), loss = tail, "checkpoint written");
        }
        Cmd::Roundtrip { image, ckpt, report, window } => {
            let ae = Autoencoder::load(&ckpt)?;
            let img = FloatImage::from_rgb(&load_rgb(&image)?);
            let window = match window {
                Some(w) => parse_window(&w)?,
                None => central_window(img.height, img.width),
            };
            let r = roundtrip_degradation(&ae, &img, window)?;
            std::fs::write(&report, serde_json::to_string_pretty(&r)?)?;
            let top = r.top_band();
            println!("top band: native {:.3} upsampled {:.3}", top.native, top.upsampled);
        }
    }
    Ok(())
}
