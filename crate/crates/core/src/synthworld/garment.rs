//! Garment products: pattern textures laid out in per-category panels, and
//! the ribbon geometry that places each panel on a pose.

use std::fmt;
use std::str::FromStr;

use image::{Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::avatar::Pose;
use super::geometry::{Ribbon, Vec2};
use super::glyph;
use super::labels;
use crate::error::{Error, Result};
use crate::raster::{FloatImage, Rgb8};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Top,
    Bottom,
    Outerwear,
    Dress,
    Shoes,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::Top, Category::Bottom, Category::Outerwear, Category::Dress, Category::Shoes];

    pub fn label(self) -> u8 {
        match self {
            Category::Top => labels::TOP,
            Category::Bottom => labels::BOTTOM,
            Category::Outerwear => labels::OUTERWEAR,
            Category::Dress => labels::DRESS,
            Category::Shoes => labels::SHOES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Top => "top",
            Category::Bottom => "bottom",
            Category::Outerwear => "outerwear",
            Category::Dress => "dress",
            Category::Shoes => "shoes",
        }
    }

    /// Product canvas `(width, height)`.
    pub fn canvas(self) -> (usize, usize) {
        match self {
            Category::Top => (64, 48),
            Category::Bottom => (64, 64),
            Category::Outerwear => (72, 56),
            Category::Dress => (64, 64),
            Category::Shoes => (32, 16),
        }
    }

    /// Texture rectangles `[x, y, w, h]`, one per part, in part order.
    pub fn panels(self) -> &'static [[f32; 4]] {
        match self {
            Category::Top => &[[21.0, 6.0, 22.0, 35.0], [12.0, 6.0, 7.0, 7.0], [45.0, 6.0, 7.0, 7.0]],
            Category::Bottom => &[
                [22.0, 4.0, 20.0, 10.0],
                [22.0, 16.0, 9.0, 19.0],
                [33.0, 16.0, 9.0, 19.0],
                [22.5, 37.0, 7.0, 15.0],
                [34.5, 37.0, 7.0, 15.0],
            ],
            Category::Outerwear => &[
                [24.0, 6.0, 24.0, 38.0],
                [14.0, 6.0, 8.0, 14.0],
                [50.0, 6.0, 8.0, 14.0],
                [14.0, 22.0, 7.0, 11.0],
                [51.0, 22.0, 7.0, 11.0],
            ],
            Category::Dress => &[
                [23.0, 9.0, 18.0, 23.0],
                [19.0, 33.0, 26.0, 26.0],
                [25.0, 2.0, 3.0, 6.0],
                [36.0, 2.0, 3.0, 6.0],
            ],
            Category::Shoes => &[[3.0, 4.0, 5.0, 8.0], [24.0, 4.0, 5.0, 8.0]],
        }
    }

    pub fn strap_parts(self) -> &'static [usize] {
        match self {
            Category::Dress => &[2, 3],
            _ => &[],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown garment category '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternFamily {
    Solid,
    Stripes,
    Checks,
    GlyphText,
    LogoBlob,
}

impl PatternFamily {
    pub const ALL: [PatternFamily; 5] = [
        PatternFamily::Solid,
        PatternFamily::Stripes,
        PatternFamily::Checks,
        PatternFamily::GlyphText,
        PatternFamily::LogoBlob,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternFamily::Solid => "solid",
            PatternFamily::Stripes => "stripes",
            PatternFamily::Checks => "checks",
            PatternFamily::GlyphText => "glyph-text",
            PatternFamily::LogoBlob => "logo-blob",
        }
    }
}

impl FromStr for PatternFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pattern family '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub family: PatternFamily,
    /// Cycles per 64 texture pixels (stripes and checks).
    #[serde(default)]
    pub frequency: f32,
    #[serde(default)]
    pub glyph: String,
    /// Texture pixels per font pixel.
    #[serde(default = "default_glyph_scale")]
    pub glyph_scale: u32,
    pub base: Rgb8,
    #[serde(default)]
    pub ink: Rgb8,
    /// Stripes run vertically (vary along u) when true.
    #[serde(default = "default_true")]
    pub vertical: bool,
}

fn default_glyph_scale() -> u32 {
    1
}

fn default_true() -> bool {
    true
}

impl PatternSpec {
    pub fn solid(base: Rgb8) -> Self {
        Self { family: PatternFamily::Solid, frequency: 0.0, glyph: String::new(), glyph_scale: 1, base, ink: base, vertical: true }
    }

    pub fn stripes(frequency: f32, base: Rgb8, ink: Rgb8) -> Self {
        Self { family: PatternFamily::Stripes, frequency, ink, ..Self::solid(base) }
    }

    pub fn glyph(text: &str, scale: u32, base: Rgb8, ink: Rgb8) -> Self {
        Self { family: PatternFamily::GlyphText, glyph: text.to_string(), glyph_scale: scale, ink, ..Self::solid(base) }
    }

    fn validate(&self) -> Result<()> {
        match self.family {
            PatternFamily::Stripes | PatternFamily::Checks if !(self.frequency > 0.0 && self.frequency <= 32.0) => {
                Err(Error::Config(format!("pattern frequency {} outside (0, 32]", self.frequency)))
            }
            PatternFamily::GlyphText if self.glyph.is_empty() || !glyph::supported(&self.glyph) => {
                Err(Error::Config(format!("glyph string '{}' is empty or uses unsupported characters", self.glyph)))
            }
            PatternFamily::GlyphText if !(1..=4).contains(&self.glyph_scale) => {
                Err(Error::Config(format!("glyph scale {} outside 1..=4", self.glyph_scale)))
            }
            _ => Ok(()),
        }
    }
}

/// Axis-aligned box of one rendered character in product coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharBox {
    pub ch: char,
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

/// Serialized identity of a garment; the raster is regenerated from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarmentSpec {
    pub seed: u64,
    pub category: Category,
    pub pattern: PatternSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GarmentSpec", into = "GarmentSpec")]
pub struct GarmentAsset {
    pub seed: u64,
    pub category: Category,
    pub pattern_spec: PatternSpec,
    /// Pattern RGB over the whole canvas; alpha marks the panels.
    pub product_image: RgbaImage,
    /// RGB planes of `product_image`, kept for bilinear lookups.
    pub texture: FloatImage,
    pub char_boxes: Vec<CharBox>,
}

impl TryFrom<GarmentSpec> for GarmentAsset {
    type Error = Error;

    fn try_from(s: GarmentSpec) -> Result<Self> {
        gen_garment(s.seed, s.category, &s.pattern)
    }
}

impl From<GarmentAsset> for GarmentSpec {
    fn from(g: GarmentAsset) -> Self {
        g.spec()
    }
}

impl GarmentAsset {
    pub fn spec(&self) -> GarmentSpec {
        GarmentSpec { seed: self.seed, category: self.category, pattern: self.pattern_spec.clone() }
    }

    pub fn alpha(&self, x: usize, y: usize) -> bool {
        self.product_image.get_pixel(x as u32, y as u32)[3] > 0
    }

    /// Bilinear RGB at texture point `(u, v)`.
    pub fn sample(&self, u: f32, v: f32) -> [f32; 3] {
        [0, 1, 2].map(|c| self.texture.sample(c, u, v))
    }
}

fn in_panel(panels: &[[f32; 4]], u: f32, v: f32) -> bool {
    panels.iter().any(|r| u >= r[0] && u < r[0] + r[2] && v >= r[1] && v < r[1] + r[3])
}

/// Character boxes for a glyph string centered on the main panel.
pub fn glyph_layout(category: Category, text: &str, scale: u32) -> Vec<CharBox> {
    let s = scale as f32;
    let main = category.panels()[0];
    let n = text.chars().count();
    let total_w = (n * glyph::ADVANCE - 1) as f32 * s;
    let total_h = glyph::GLYPH_H as f32 * s;
    let x0 = (main[0] + (main[2] - total_w) / 2.0).round();
    let y0 = (main[1] + (main[3] - total_h) / 2.0).round();
    text.chars()
        .enumerate()
        .map(|(i, ch)| CharBox {
            ch,
            x: x0 + (i * glyph::ADVANCE) as f32 * s,
            y: y0,
            w: glyph::GLYPH_W as f32 * s,
            h: total_h,
        })
        .collect()
}

/// Deterministic product image for `(seed, category, pattern)`.
pub fn gen_garment(seed: u64, category: Category, pattern: &PatternSpec) -> Result<GarmentAsset> {
    pattern.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a2e_0000_0000_0003);
    let (cw, ch) = category.canvas();
    let panels = category.panels();
    let period = 64.0 / pattern.frequency.max(1e-3);
    let phase_u = rng.random_range(0.0..period).floor();
    let phase_v = rng.random_range(0.0..period).floor();
    let main = panels[0];
    let blobs: Vec<(f32, f32, f32, f32)> = (0..rng.random_range(1..=3))
        .map(|_| {
            let rx = rng.random_range(2.5..6.0f32).min(main[2] / 2.0);
            let ry = rng.random_range(2.5..6.0f32).min(main[3] / 2.0);
            let cx = main[0] + rng.random_range(rx..=(main[2] - rx).max(rx));
            let cy = main[1] + rng.random_range(ry..=(main[3] - ry).max(ry));
            (cx, cy, rx, ry)
        })
        .collect();
    let char_boxes = match pattern.family {
        PatternFamily::GlyphText => glyph_layout(category, &pattern.glyph, pattern.glyph_scale),
        _ => Vec::new(),
    };
    let s = pattern.glyph_scale.max(1) as f32;
    let is_ink = |u: f32, v: f32| -> bool {
        match pattern.family {
            PatternFamily::Solid => false,
            PatternFamily::Stripes => {
                let c = if pattern.vertical { u + phase_u } else { v + phase_v };
                (c / period).rem_euclid(1.0) < 0.5
            }
            PatternFamily::Checks => {
                let a = ((u + phase_u) / (period / 2.0)).floor() as i64;
                let b = ((v + phase_v) / (period / 2.0)).floor() as i64;
                (a + b).rem_euclid(2) == 1
            }
            PatternFamily::GlyphText => char_boxes.iter().any(|b| {
                let (du, dv) = (u - b.x, v - b.y);
                du >= 0.0 && dv >= 0.0 && glyph::ink(b.ch, (du / s) as usize, (dv / s) as usize)
            }),
            PatternFamily::LogoBlob => blobs.iter().any(|&(bx, by, rx, ry)| {
                let (dx, dy) = ((u - bx) / rx, (v - by) / ry);
                dx * dx + dy * dy <= 1.0
            }),
        }
    };
    let mut product = RgbaImage::new(cw as u32, ch as u32);
    let mut texture = FloatImage::new(3, ch, cw);
    for y in 0..ch {
        for x in 0..cw {
            let (u, v) = (x as f32 + 0.5, y as f32 + 0.5);
            let c = if is_ink(u, v) { pattern.ink } else { pattern.base };
            let a = if in_panel(panels, u, v) { 255 } else { 0 };
            product.put_pixel(x as u32, y as u32, Rgba([c[0], c[1], c[2], a]));
            texture.set_pixel(y, x, c.map(|v| v as f32));
        }
    }
    Ok(GarmentAsset { seed, category, pattern_spec: pattern.clone(), product_image: product, texture, char_boxes })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fit {
    Loose,
    #[default]
    Tight,
}

impl Fit {
    fn widen(self) -> f32 {
        match self {
            Fit::Loose => 1.12,
            Fit::Tight => 1.0,
        }
    }
}

/// Half-width fraction cleared down the front of open outerwear.
pub const OPEN_GAP: f32 = 0.3;

/// One garment panel mapped onto the body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlacedPart {
    pub ribbon: Ribbon,
    pub panel: [f32; 4],
    pub strap: bool,
    /// Points with `|s| < gap` are uncovered.
    pub gap: f32,
}

impl PlacedPart {
    /// Texture coordinate of world point `p`, if the part covers it.
    pub fn uv(&self, p: Vec2) -> Option<[f32; 2]> {
        let (s, t) = self.ribbon.local(p)?;
        if s.abs() < self.gap {
            return None;
        }
        let [x, y, w, h] = self.panel;
        Some([x + (s + 1.0) / 2.0 * w, y + t * h])
    }
}

/// Panels of `category` placed on `pose`; earlier parts win overlaps.
pub fn place_parts(category: Category, pose: &Pose, fit: Fit, open: bool) -> Vec<PlacedPart> {
    let w = fit.widen();
    let tw = pose.torso_width * w;
    let u = |v: f32| pose.u(v);
    let rib = |a: Vec2, b: Vec2, ha: f32, hb: f32| Ribbon { a, b, half_a: u(ha), half_b: u(hb) };
    let ribbons: Vec<Ribbon> = match category {
        Category::Top => vec![
            rib(pose.mid(0.0, 20.5), pose.mid(0.0, 56.0), 11.5 * tw, 9.8 * tw),
            rib(pose.shoulder[0], pose.shoulder[0].lerp(pose.elbow[0], 0.5), 3.5 * w, 3.2 * w),
            rib(pose.shoulder[1], pose.shoulder[1].lerp(pose.elbow[1], 0.5), 3.5 * w, 3.2 * w),
        ],
        Category::Outerwear => vec![
            rib(pose.mid(0.0, 20.0), pose.mid(0.0, 58.0), 12.6 * tw, 10.8 * tw),
            rib(pose.shoulder[0], pose.elbow[0], 3.8 * w, 3.4 * w),
            rib(pose.shoulder[1], pose.elbow[1], 3.8 * w, 3.4 * w),
            rib(pose.elbow[0], pose.elbow[0].lerp(pose.wrist[0], 0.85), 3.3 * w, 2.9 * w),
            rib(pose.elbow[1], pose.elbow[1].lerp(pose.wrist[1], 0.85), 3.3 * w, 2.9 * w),
        ],
        Category::Bottom => vec![
            rib(pose.mid(0.0, 48.0), pose.mid(0.0, 58.0), 9.4 * tw, 10.0 * tw),
            rib(pose.hip[0], pose.knee[0], 4.6 * w, 4.0 * w),
            rib(pose.hip[1], pose.knee[1], 4.6 * w, 4.0 * w),
            rib(pose.knee[0], pose.knee[0].lerp(pose.ankle[0], 0.9), 3.7 * w, 3.3 * w),
            rib(pose.knee[1], pose.knee[1].lerp(pose.ankle[1], 0.9), 3.7 * w, 3.3 * w),
        ],
        Category::Dress => vec![
            rib(pose.mid(0.0, 25.0), pose.mid(0.0, 48.0), 9.6 * tw, 8.6 * tw),
            rib(pose.mid(0.0, 48.0), pose.mid(0.0, 74.0), 9.0 * tw, 15.5 * tw),
            rib(pose.mid(-5.5 * tw, 20.5), pose.mid(-5.5 * tw, 25.5), 1.3, 1.3),
            rib(pose.mid(5.5 * tw, 20.5), pose.mid(5.5 * tw, 25.5), 1.3, 1.3),
        ],
        Category::Shoes => (0..2)
            .map(|s| {
                let out = if s == 0 { -1.0 } else { 1.0 };
                let a = pose.ankle[s];
                rib(
                    Vec2::new(a.x - out * u(1.8), a.y + u(1.6)),
                    Vec2::new(a.x + out * u(6.0), a.y + u(1.6)),
                    2.4 * w,
                    2.4 * w,
                )
            })
            .collect(),
    };
    let straps = category.strap_parts();
    ribbons
        .into_iter()
        .zip(category.panels())
        .enumerate()
        .map(|(i, (ribbon, &panel))| PlacedPart {
            ribbon,
            panel,
            strap: straps.contains(&i),
            gap: if open && category == Category::Outerwear && i == 0 { OPEN_GAP } else { 0.0 },
        })
        .collect()
}

/// First part covering `p`: `(part index, uv)`.
pub fn locate(parts: &[PlacedPart], p: Vec2) -> Option<(usize, [f32; 2])> {
    parts.iter().enumerate().find_map(|(i, part)| part.uv(p).map(|uv| (i, uv)))
}

const BASE_COLORS: [Rgb8; 10] = [
    [200, 40, 40],
    [40, 80, 170],
    [30, 120, 70],
    [230, 200, 60],
    [240, 240, 235],
    [30, 30, 35],
    [120, 70, 150],
    [240, 140, 50],
    [90, 160, 200],
    [150, 110, 80],
];

fn luma(c: Rgb8) -> f32 {
    0.299 * c[0] as f32 + 0.587 * c[1] as f32 + 0.114 * c[2] as f32
}

fn jitter(rng: &mut ChaCha8Rng, c: Rgb8) -> Rgb8 {
    c.map(|v| (v as i32 + rng.random_range(-12..=12)).clamp(0, 255) as u8)
}

/// Light base with dark ink, contrast high enough to survive shading.
pub fn light_dark_pair(rng: &mut ChaCha8Rng) -> (Rgb8, Rgb8) {
    loop {
        let base = [rng.random_range(190..=250u8), rng.random_range(190..=250u8), rng.random_range(190..=250u8)];
        let ink = [rng.random_range(10..=70u8), rng.random_range(10..=70u8), rng.random_range(10..=90u8)];
        if 0.72 * luma(base) - luma(ink) >= 60.0 {
            return (base, ink);
        }
    }
}

/// A contrasting `(base, ink)` pair in either polarity.
pub fn contrast_pair(rng: &mut ChaCha8Rng) -> (Rgb8, Rgb8) {
    loop {
        let (ia, ib) = (rng.random_range(0..BASE_COLORS.len()), rng.random_range(0..BASE_COLORS.len()));
        let a = jitter(rng, BASE_COLORS[ia]);
        let b = jitter(rng, BASE_COLORS[ib]);
        let (hi, lo) = if luma(a) >= luma(b) { (a, b) } else { (b, a) };
        if 0.72 * luma(hi) - luma(lo) >= 50.0 {
            return (a, b);
        }
    }
}

pub const GLYPH_ALPHABET: &[u8] = b"ABCDEFGHJKLMNPRSTUVWXYZ0123456789";

pub fn random_glyph_text(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| GLYPH_ALPHABET[rng.random_range(0..GLYPH_ALPHABET.len())] as char).collect()
}

/// Random pattern for the training corpus.
pub fn random_pattern(rng: &mut ChaCha8Rng, category: Category) -> PatternSpec {
    let roll = rng.random_range(0.0..1.0f32);
    let (base, ink) = contrast_pair(rng);
    let vertical = rng.random_bool(0.5);
    let glyph_ok = matches!(category, Category::Top | Category::Dress | Category::Outerwear);
    if glyph_ok && roll < 0.4 {
        let (base, ink) = if rng.random_bool(0.7) { light_dark_pair(rng) } else { (ink, base) };
        let scale = if rng.random_bool(0.7) { 1 } else { 2 };
        let len = if scale == 1 { rng.random_range(1..=3) } else { 1 };
        return PatternSpec::glyph(&random_glyph_text(rng, len), scale, base, ink);
    }
    match rng.random_range(0..4) {
        0 => PatternSpec::solid(base),
        1 => PatternSpec { vertical, ..PatternSpec::stripes(rng.random_range(3.0..12.0f32).round(), base, ink) },
        2 => PatternSpec {
            family: PatternFamily::Checks,
            frequency: rng.random_range(3.0..8.0f32).round(),
            ..PatternSpec::stripes(1.0, base, ink)
        },
        _ => PatternSpec { family: PatternFamily::LogoBlob, ..PatternSpec::solid(base) }.with_ink(ink),
    }
}

impl PatternSpec {
    pub fn with_ink(mut self, ink: Rgb8) -> Self {
        self.ink = ink;
        self
    }
}
