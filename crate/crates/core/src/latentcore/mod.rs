//! Latent autoencoder (the VAE stand-in) and the frequency-degradation
//! analyzer.

mod autoencoder;
mod spectrum;

pub use autoencoder::{
    train_autoencoder, Autoencoder, AutoencoderConfig, LatentTensor, CHECKPOINT_KIND, FACTOR,
};
pub use spectrum::{
    band_errors, band_of, central_window, mse, roundtrip_degradation, BandError, RoundtripReport, BANDS, BAND_EDGES,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::raster::{FloatImage, View};
use crate::synthworld::{gen_avatar, glyph_outfit, random_outfit, render_dressed, render_view, WorldConfig};
use crate::warpkit::{make_simulated_incomplete, PerfectReverser};

/// Window covering `frac` of each image side at a random position.
pub fn random_window(rng: &mut impl Rng, height: usize, width: usize, frac: f32) -> View {
    let (w, h) = (width as f32 * frac, height as f32 * frac);
    View { x: rng.random_range(0.0..=width as f32 - w), y: rng.random_range(0.0..=height as f32 - h), w, h }
}

/// Autoencoder training images for avatar seeds `start..start+count`: the
/// dressed photo, a zoomed re-render, a simulated incomplete image, and a
/// flat colour every other seed.
pub fn training_corpus(start: u64, count: usize, config: &WorldConfig) -> Result<Vec<FloatImage>> {
    let (h, w) = (config.height, config.width);
    let mut out = Vec::with_capacity(count * 4);
    for s in start..start + count as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x00ae_c0de);
        let avatar = gen_avatar(s, config)?;
        let outfit = if s % 3 == 0 { glyph_outfit(s)? } else { random_outfit(s)? };
        let dressed = render_dressed(&avatar, &outfit)?;
        let frac = rng.random_range(0.25..=0.75f32);
        let view = random_window(&mut rng, h, w, frac);
        out.push(render_view(&avatar, &outfit, view, h, w)?.image);
        out.push(make_simulated_incomplete(&dressed, &PerfectReverser)?.image);
        out.push(dressed.image);
        if s % 2 == 0 {
            let c: [f32; 3] = std::array::from_fn(|_| rng.random_range(0..=255u8) as f32);
            out.push(FloatImage::filled(h, w, c));
        }
    }
    Ok(out)
}
