//! Geometric garment warper and layout predictor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{FloatImage, LabelMap, Mask};
use crate::synthworld::{
    labels, locate, place_parts, AvatarSample, Category, GarmentAsset, OutfitComposition, PlacedPart, StyleFlags, Vec2,
};

/// Misalignment applied by the warper.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Displacement amplitude in pixels.
    pub amplitude: f32,
    pub seed: u64,
}

impl Jitter {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(amplitude: f32, seed: u64) -> Self {
        Self { amplitude, seed }
    }
}

/// Smooth displacement: a global shift of magnitude in `[0.6, 1] * A` plus a
/// low-frequency sinusoidal field of amplitude `0.3 * A`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisplacementField {
    shift: Vec2,
    amp: f32,
    k: [Vec2; 2],
    phase: [f32; 2],
}

impl DisplacementField {
    pub fn new(jitter: Jitter, unit: f32) -> Self {
        if jitter.amplitude <= 0.0 {
            return Self { shift: Vec2::new(0.0, 0.0), amp: 0.0, k: [Vec2::new(0.0, 0.0); 2], phase: [0.0; 2] };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(jitter.seed ^ 0x6a17_7e42);
        let a = jitter.amplitude;
        let theta = rng.random_range(0.0..std::f32::consts::TAU);
        let mag = rng.random_range(0.6 * a..=a);
        let mut wave = || {
            let ang = rng.random_range(0.0..std::f32::consts::TAU);
            let len = rng.random_range(20.0..40.0f32) * unit;
            Vec2::new(ang.cos(), ang.sin()).scale(std::f32::consts::TAU / len)
        };
        let k = [wave(), wave()];
        Self {
            shift: Vec2::new(theta.cos(), theta.sin()).scale(mag),
            amp: 0.3 * a,
            k,
            phase: [rng.random_range(0.0..std::f32::consts::TAU), rng.random_range(0.0..std::f32::consts::TAU)],
        }
    }

    pub fn at(&self, p: Vec2) -> Vec2 {
        if self.amp == 0.0 {
            return self.shift;
        }
        let dx = self.amp * (p.dot(self.k[0]) + self.phase[0]).sin();
        let dy = self.amp * (p.dot(self.k[1]) + self.phase[1]).sin();
        self.shift.add(Vec2::new(dx, dy))
    }
}

/// Warped garment `g^w`: unshaded product pixels placed on the body.
#[derive(Clone, Debug)]
pub struct WarpedGarment {
    pub image: FloatImage,
    pub alpha: Mask,
    pub category: Category,
    pub source_seed: u64,
    pub jitter: Jitter,
    /// Texture coordinate behind each covered pixel.
    pub uv: Vec<Option<[f32; 2]>>,
}

/// Places `g` on `avatar` in `slot`.
pub fn warp_garment(
    g: &GarmentAsset,
    avatar: &AvatarSample,
    slot: Category,
    style: StyleFlags,
    jitter: Jitter,
) -> Result<WarpedGarment> {
    if slot != g.category {
        return Err(Error::Composition(format!("{} garment cannot be warped into the {slot} slot", g.category)));
    }
    if !(jitter.amplitude >= 0.0 && jitter.amplitude.is_finite()) {
        return Err(Error::Config(format!("jitter {} must be finite and non-negative", jitter.amplitude)));
    }
    let parts = place_parts(slot, &avatar.pose, style.fit, style.open);
    let field = DisplacementField::new(jitter, avatar.pose.unit);
    let (h, w) = (avatar.height(), avatar.width());
    let mut image = FloatImage::new(3, h, w);
    let mut alpha = Mask::new(h, w);
    let mut uv = vec![None; h * w];
    for i in 0..h {
        for j in 0..w {
            let p = Vec2::new(j as f32 + 0.5, i as f32 + 0.5);
            let src = p.sub(field.at(p));
            if let Some((_, t)) = locate(&parts, src) {
                alpha.set(i, j, true);
                uv[i * w + j] = Some(t);
                image.set_pixel(i, j, g.sample(t[0], t[1]));
            }
        }
    }
    if alpha.is_empty() {
        return Err(Error::Composition(format!("{slot} warp left no pixels in frame")));
    }
    Ok(WarpedGarment { image, alpha, category: slot, source_seed: g.seed, jitter, uv })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutCorruption {
    #[default]
    None,
    /// Strap parts are dropped; the body shows through.
    StrapDropout,
}

/// Post-try-on parsing `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutPrediction {
    pub parsing: LabelMap,
}

/// Visible layer at `p` among per-layer part lists, skipping straps if asked.
fn visible_layer(
    parts: &[Vec<PlacedPart>],
    tucked: &[bool],
    bottom: Option<usize>,
    p: Vec2,
    drop_straps: bool,
) -> Option<usize> {
    let covers = |k: usize| -> bool {
        let Some((idx, _)) = locate(&parts[k], p) else { return false };
        if drop_straps && parts[k][idx].strap {
            return false;
        }
        if tucked[k] {
            if let Some(b) = bottom {
                if locate(&parts[b], p).is_some() {
                    return false;
                }
            }
        }
        true
    };
    (0..parts.len()).rev().find(|&k| covers(k))
}

/// Exact layout from the renderer's geometry, optionally corrupted.
pub fn predict_layout(
    outfit: &OutfitComposition,
    avatar: &AvatarSample,
    corruption: LayoutCorruption,
) -> Result<LayoutPrediction> {
    outfit.validate()?;
    let parts: Vec<Vec<PlacedPart>> =
        outfit.layers.iter().map(|l| place_parts(l.slot, &avatar.pose, l.style.fit, l.style.open)).collect();
    let tucked: Vec<bool> = outfit.layers.iter().map(|l| l.style.tucked).collect();
    let bottom = outfit.index_of(Category::Bottom);
    let drop = corruption == LayoutCorruption::StrapDropout;
    let (h, w) = (avatar.height(), avatar.width());
    let mut parsing = avatar.parsing.clone();
    for i in 0..h {
        for j in 0..w {
            let p = Vec2::new(j as f32 + 0.5, i as f32 + 0.5);
            if let Some(k) = visible_layer(&parts, &tucked, bottom, p, drop) {
                parsing.set(i, j, outfit.layers[k].slot.label());
            }
        }
    }
    debug_assert!(parsing.data.iter().all(|&l| labels::is_known(l)));
    Ok(LayoutPrediction { parsing })
}
