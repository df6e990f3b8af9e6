//! Try-on generation from an outfit description.

use std::fs;
use std::path::PathBuf;

use acdg::inferpipe::{compose_control, generate_full, generate_zoom, ModelBundle, SamplerOptions, ZoomWindow};
use acdg::raster::save_png_rgb;
use acdg::synthworld::{gen_avatar, glyph_outfit, OutfitComposition, WorldConfig};
use acdg::warpkit::Jitter;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "inferpipe", about = "Compose an outfit and sample the try-on image")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a try-on image (or a zoomed view) for an outfit.
    Generate {
        /// Outfit JSON: `{"avatar": ID, "layers": [{"garment": {...}, "slot": ..., "style": {...}}]}`.
        #[arg(long)]
        outfit: PathBuf,
        #[arg(long)]
        avatar: u64,
        /// Directory with autoencoder.safetensors and denoiser.safetensors.
        #[arg(long)]
        ckpt: PathBuf,
        /// `x,y,w,h` window with the frame's aspect ratio.
        #[arg(long)]
        zoom: Option<ZoomWindow>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the control image here.
        #[arg(long)]
        control_out: Option<PathBuf>,
    },
    /// Print the glyph test outfit for an avatar as JSON.
    ExampleOutfit {
        #[arg(long)]
        avatar: u64,
    },
}

fn main() -> anyhow::Result<()> {
    acdg::telemetry::init();
    match Cli::parse().cmd {
        Cmd::Generate { outfit, avatar, ckpt, zoom, seed, out, control_out } => {
            let outfit: OutfitComposition = serde_json::from_str(&fs::read_to_string(&outfit)?)?;
            let bundle = ModelBundle::load(&ckpt)?;
            let world = WorldConfig::new(bundle.height(), bundle.width())?;
            let avatar = gen_avatar(avatar, &world)?;
            let composed = compose_control(&outfit, &avatar, Jitter::none())?;
            let control = &composed.control.image;
            if let Some(p) = control_out {
                save_png_rgb(&control.to_rgb(), &p)?;
            }
            let opts = SamplerOptions::default();
            let result = match zoom {
                Some(w) => generate_zoom(&bundle, control, &composed.joints, w, seed, opts)?,
                None => generate_full(&bundle, control, &composed.joints, seed, opts)?,
            };
            save_png_rgb(&result.image.to_rgb(), &out)?;
            tracing::info!(
                path = %out.display(),
                evaluations = result.evaluations(),
                sample_ms = result.timings.sample_ms,
                "image written"
            );
        }
        Cmd::ExampleOutfit { avatar } => {
            println!("{}", serde_json::to_string_pretty(&glyph_outfit(avatar)?)?);
        }
    }
    Ok(())
}
