//! Dressed-avatar renderer with exact texture correspondence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::avatar::AvatarSample;
use super::garment::{locate, place_parts, Category, GarmentAsset, PlacedPart};
use super::geometry::Vec2;
use super::outfit::OutfitComposition;
use super::labels;
use crate::error::{Error, Result};
use crate::raster::{quantize, FloatImage, LabelMap, Mask, View};

/// Smooth multiplicative shading on one garment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadeField {
    cx: f32,
    width: f32,
    falloff: f32,
    amp: f32,
    dir: Vec2,
    wavelength: f32,
    phase: f32,
}

impl ShadeField {
    pub const MIN: f32 = 0.72;

    fn new(avatar: &AvatarSample, layer: usize, garment: &GarmentAsset) -> Self {
        let key = avatar.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ garment.seed.rotate_left(17) ^ layer as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let angle = rng.random_range(0.0..std::f32::consts::PI);
        Self {
            cx: avatar.pose.cx,
            width: 14.0 * avatar.pose.unit,
            falloff: rng.random_range(0.06..0.14),
            amp: rng.random_range(0.04..0.10),
            dir: Vec2::new(angle.cos(), angle.sin()),
            wavelength: rng.random_range(10.0..18.0) * avatar.pose.unit,
            phase: rng.random_range(0.0..std::f32::consts::TAU),
        }
    }

    pub fn at(&self, p: Vec2) -> f32 {
        let dx = (p.x - self.cx) / self.width;
        let wave = 0.5 + 0.5 * (std::f32::consts::TAU * p.dot(self.dir) / self.wavelength + self.phase).sin();
        (0.99 - self.falloff * dx * dx - self.amp * wave).clamp(Self::MIN, 1.0)
    }

    pub fn identity() -> Self {
        Self { cx: 0.0, width: 1.0, falloff: 0.0, amp: 0.0, dir: Vec2::new(1.0, 0.0), wavelength: 1.0, phase: 0.0 }
    }
}

/// A garment placed on an avatar.
#[derive(Clone, Debug)]
pub struct Worn<'a> {
    pub layer: usize,
    pub garment: &'a GarmentAsset,
    pub parts: Vec<PlacedPart>,
    pub shade: ShadeField,
    pub tucked: bool,
}

/// Geometry of an outfit on a specific avatar.
#[derive(Clone, Debug)]
pub struct Scene<'a> {
    pub avatar: &'a AvatarSample,
    pub worn: Vec<Worn<'a>>,
    bottom: Option<usize>,
}

impl<'a> Scene<'a> {
    pub fn new(avatar: &'a AvatarSample, outfit: &'a OutfitComposition) -> Result<Self> {
        outfit.validate()?;
        let worn: Vec<Worn<'a>> = outfit
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| Worn {
                layer: i,
                garment: &l.garment,
                parts: place_parts(l.slot, &avatar.pose, l.style.fit, l.style.open),
                shade: ShadeField::new(avatar, i, &l.garment),
                tucked: l.style.tucked,
            })
            .collect();
        let bottom = outfit.index_of(Category::Bottom);
        Ok(Self { avatar, worn, bottom })
    }

    /// Coverage of layer `k` alone (ignoring occlusion): `(part, uv)`.
    pub fn coverage(&self, k: usize, p: Vec2) -> Option<(usize, [f32; 2])> {
        let w = &self.worn[k];
        let hit = locate(&w.parts, p)?;
        if w.tucked {
            if let Some(b) = self.bottom {
                if locate(&self.worn[b].parts, p).is_some() {
                    return None;
                }
            }
        }
        Some(hit)
    }

    /// Topmost visible garment at `p`: `(layer, part, uv)`.
    pub fn visible(&self, p: Vec2) -> Option<(usize, usize, [f32; 2])> {
        (0..self.worn.len()).rev().find_map(|k| self.coverage(k, p).map(|(part, uv)| (k, part, uv)))
    }

    /// Shaded garment color of layer `k` at texture point `uv`.
    pub fn garment_color(&self, k: usize, uv: [f32; 2], p: Vec2) -> [f32; 3] {
        let s = self.worn[k].shade.at(p);
        self.worn[k].garment.sample(uv[0], uv[1]).map(|c| c * s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UvHit {
    pub layer: usize,
    pub part: usize,
    pub uv: [f32; 2],
}

/// Ground-truth dressed image with per-pixel texture correspondence.
#[derive(Clone, Debug)]
pub struct DressedSample {
    pub image: FloatImage,
    pub outfit: OutfitComposition,
    /// Garment-slot label of the visible garment, 0 elsewhere.
    pub per_garment_mask: LabelMap,
    /// Full label map: body labels plus garment slots.
    pub parsing: LabelMap,
    pub texture_uv: Vec<Option<UvHit>>,
    /// Shading multiplier on garment pixels, 1 elsewhere.
    pub shading: Vec<f32>,
    pub avatar_ref: AvatarSample,
    pub view: View,
}

impl DressedSample {
    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    /// Visible pixels of layer `k`.
    pub fn layer_mask(&self, k: usize) -> Mask {
        let mut m = Mask::new(self.height(), self.width());
        for (i, hit) in self.texture_uv.iter().enumerate() {
            m.data[i] = hit.is_some_and(|h| h.layer == k);
        }
        m
    }

    /// The unclothed avatar as a sample with no layers.
    pub fn bare(avatar: &AvatarSample) -> Self {
        let (h, w) = (avatar.height(), avatar.width());
        Self {
            image: avatar.body_image.clone(),
            outfit: OutfitComposition::new(avatar.seed, Vec::new()),
            per_garment_mask: LabelMap::new(h, w),
            parsing: avatar.parsing.clone(),
            texture_uv: vec![None; h * w],
            shading: vec![1.0; h * w],
            avatar_ref: avatar.clone(),
            view: View::full(h, w),
        }
    }

    pub fn garment_mask(&self) -> Mask {
        let mut m = Mask::new(self.height(), self.width());
        for (i, hit) in self.texture_uv.iter().enumerate() {
            m.data[i] = hit.is_some();
        }
        m
    }
}

/// Renders `outfit` on `avatar` at base resolution.
pub fn render_dressed(avatar: &AvatarSample, outfit: &OutfitComposition) -> Result<DressedSample> {
    render_view(avatar, outfit, View::full(avatar.height(), avatar.width()), avatar.height(), avatar.width())
}

/// Renders through an arbitrary window, used for zoom ground truth.
pub fn render_view(
    avatar: &AvatarSample,
    outfit: &OutfitComposition,
    view: View,
    out_h: usize,
    out_w: usize,
) -> Result<DressedSample> {
    if outfit.is_empty() {
        return Err(Error::Composition("outfit has no layers".into()));
    }
    let scene = Scene::new(avatar, outfit)?;
    let mut image = FloatImage::new(3, out_h, out_w);
    let mut per_garment_mask = LabelMap::new(out_h, out_w);
    let mut parsing = LabelMap::new(out_h, out_w);
    let mut texture_uv = vec![None; out_h * out_w];
    let mut shading = vec![1.0; out_h * out_w];
    for i in 0..out_h {
        for j in 0..out_w {
            let (x, y) = view.inverse((j as f32 + 0.5, i as f32 + 0.5), out_h, out_w);
            let p = Vec2::new(x, y);
            let idx = i * out_w + j;
            let color = match scene.visible(p) {
                Some((k, part, uv)) => {
                    let label = outfit.layers[k].slot.label();
                    per_garment_mask.data[idx] = label;
                    parsing.data[idx] = label;
                    texture_uv[idx] = Some(UvHit { layer: k, part, uv });
                    shading[idx] = scene.worn[k].shade.at(p);
                    scene.garment_color(k, uv, p)
                }
                None => {
                    let (label, color) = avatar.body_at(p);
                    parsing.data[idx] = label;
                    color
                }
            };
            image.set_pixel(i, j, color.map(|c| quantize(c) as f32));
        }
    }
    debug_assert!(per_garment_mask.data.iter().zip(&parsing.data).all(|(&g, &p)| g == 0 || p != labels::BACKGROUND));
    Ok(DressedSample {
        image,
        outfit: outfit.clone(),
        per_garment_mask,
        parsing,
        texture_uv,
        shading,
        avatar_ref: avatar.clone(),
        view,
    })
}
