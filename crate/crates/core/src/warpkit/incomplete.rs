//! Incomplete images: `s^i` for training, `m^i` for inference.

use serde::{Deserialize, Serialize};

use super::reverse_warp::ReverseWarp;
use super::warp::{LayoutPrediction, WarpedGarment};
use crate::error::{Error, Result};
use crate::raster::{quantize, FloatImage, LabelMap, Mask, Rgb8};
use crate::synthworld::{labels, AvatarSample, DressedSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlKind {
    /// `m^i`: warped garments pasted on the bare avatar.
    Inference,
    /// `s^i`: the ground-truth photo with garments reverse-warped in place.
    Simulated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlImage {
    pub image: FloatImage,
    pub kind: ControlKind,
    pub skin_fill: Rgb8,
    /// Parsing that decided which pixels were skin-filled.
    pub parsing: LabelMap,
    pub avatar: u64,
    pub outfit_digest: String,
}

/// Per-channel lower median of `image` over `mask`.
pub fn median_color(image: &FloatImage, mask: &Mask) -> Result<Rgb8> {
    if mask.is_empty() {
        return Err(Error::SkinFill("face region is empty".into()));
    }
    let mut out = [0u8; 3];
    let mut vals = Vec::with_capacity(mask.count());
    for (c, o) in out.iter_mut().enumerate() {
        vals.clear();
        vals.extend(mask.data.iter().zip(image.plane(c)).filter(|(m, _)| **m).map(|(_, v)| quantize(*v)));
        vals.sort_unstable();
        *o = vals[(vals.len() - 1) / 2];
    }
    Ok(out)
}

pub fn median_face_color(avatar: &AvatarSample) -> Result<Rgb8> {
    median_color(&avatar.body_image, &avatar.face_mask())
        .map_err(|_| Error::SkinFill(format!("avatar {} has no face pixels", avatar.seed)))
}

/// Sets every skin-labeled pixel to `fill`. Idempotent.
pub fn fill_skin(image: &mut FloatImage, parsing: &LabelMap, fill: Rgb8) {
    let fill = fill.map(|c| c as f32);
    for y in 0..parsing.height {
        for x in 0..parsing.width {
            if labels::is_skin(parsing.get(y, x)) {
                image.set_pixel(y, x, fill);
            }
        }
    }
}

/// Produces the reverse-warped model image `m^r`.
pub trait GarmentReverser {
    fn reverse(&self, sample: &DressedSample) -> Result<FloatImage>;
}

impl GarmentReverser for ReverseWarp {
    fn reverse(&self, sample: &DressedSample) -> Result<FloatImage> {
        let mut img = self.reverse_warp_image(sample)?;
        for v in img.data.iter_mut() {
            *v = quantize(*v) as f32;
        }
        Ok(img)
    }
}

/// Ideal U: resamples the unshaded product texture through the known
/// correspondence.
#[derive(Clone, Copy, Debug, Default)]
pub struct PerfectReverser;

impl GarmentReverser for PerfectReverser {
    fn reverse(&self, sample: &DressedSample) -> Result<FloatImage> {
        let mut img = sample.image.clone();
        let w = sample.width();
        for (idx, hit) in sample.texture_uv.iter().enumerate() {
            if let Some(h) = hit {
                let c = sample.outfit.layers[h.layer].garment.sample(h.uv[0], h.uv[1]);
                img.set_pixel(idx / w, idx % w, c.map(|v| quantize(v) as f32));
            }
        }
        Ok(img)
    }
}

pub fn make_simulated_incomplete(sample: &DressedSample, u: &dyn GarmentReverser) -> Result<ControlImage> {
    let mut face = Mask::new(sample.height(), sample.width());
    for (i, &l) in sample.parsing.data.iter().enumerate() {
        face.data[i] = l == labels::FACE;
    }
    let fill = median_color(&sample.image, &face)
        .map_err(|_| Error::SkinFill(format!("sample of avatar {} shows no face", sample.avatar_ref.seed)))?;
    let mut image = u.reverse(sample)?;
    fill_skin(&mut image, &sample.parsing, fill);
    Ok(ControlImage {
        image,
        kind: ControlKind::Simulated,
        skin_fill: fill,
        parsing: sample.parsing.clone(),
        avatar: sample.avatar_ref.seed,
        outfit_digest: sample.outfit.digest(),
    })
}

/// Pastes `warps` in order inside the layout's garment region, then fills
/// the layout's skin.
pub fn make_incomplete_inference(
    avatar: &AvatarSample,
    warps: &[WarpedGarment],
    layout: &LayoutPrediction,
    outfit_digest: &str,
) -> Result<ControlImage> {
    let fill = median_face_color(avatar)?;
    let mut image = avatar.body_image.clone();
    let p = &layout.parsing;
    for warp in warps {
        for y in 0..p.height {
            for x in 0..p.width {
                if warp.alpha.get(y, x) && labels::is_garment(p.get(y, x)) {
                    image.set_pixel(y, x, warp.image.pixel(y, x));
                }
            }
        }
    }
    fill_skin(&mut image, p, fill);
    Ok(ControlImage {
        image,
        kind: ControlKind::Inference,
        skin_fill: fill,
        parsing: p.clone(),
        avatar: avatar.seed,
        outfit_digest: outfit_digest.to_string(),
    })
}
