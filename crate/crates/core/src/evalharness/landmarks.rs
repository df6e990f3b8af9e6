//! Pattern landmarks located through ground-truth texture coordinates.
//!
//! A landmark is the ink-weighted centroid over a region of pixels chosen by
//! their ground-truth texture coordinate. Each pixel's weight ramps its
//! darkening relative to the brightest same-garment pixel within 4 px,
//! divided by the pattern's ink/base contrast, so multiplicative shading
//! cancels.

use crate::raster::{luminance, FloatImage, Mask, View};
use crate::synthworld::{Category, DressedSample, PatternFamily};

/// Texels the glyph boxes are grown by; a shift up to this size stays
/// measurable.
pub const GLYPH_MARGIN: f32 = 4.0;
const WINDOW: i64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkRegion {
    pub member: Mask,
    pub garment: Mask,
    /// `1 - L(ink) / L(base)`.
    pub depth: f32,
}

fn contrast(s: &DressedSample, k: usize) -> Option<f32> {
    let spec = &s.outfit.layers[k].garment.pattern_spec;
    let base = luminance(spec.base.map(|c| c as f32));
    let d = 1.0 - luminance(spec.ink.map(|c| c as f32)) / base;
    (base > 0.0 && d > 0.05).then_some(d)
}

fn region(s: &DressedSample, k: usize, pick: impl Fn(usize, [f32; 2]) -> bool) -> Option<LandmarkRegion> {
    let depth = contrast(s, k)?;
    let mut member = Mask::new(s.height(), s.width());
    for (i, hit) in s.texture_uv.iter().enumerate() {
        member.data[i] = hit.is_some_and(|h| h.layer == k && pick(h.part, h.uv));
    }
    (!member.is_empty()).then(|| LandmarkRegion { member, garment: s.layer_mask(k), depth })
}

/// Glyph boxes of the garment in `slot`, grown by [`GLYPH_MARGIN`].
pub fn glyph_region(s: &DressedSample, slot: Category) -> Option<LandmarkRegion> {
    let k = s.outfit.index_of(slot)?;
    let boxes = &s.outfit.layers[k].garment.char_boxes;
    if boxes.is_empty() {
        return None;
    }
    let m = GLYPH_MARGIN;
    region(s, k, |_, [u, v]| {
        boxes.iter().any(|b| u >= b.x - m && u <= b.x + b.w + m && v >= b.y - m && v <= b.y + b.h + m)
    })
}

/// Interior of the first striped leg panel (part 1) of the garment in
/// `slot`, shrunk by 2 texels.
pub fn stripe_region(s: &DressedSample, slot: Category) -> Option<LandmarkRegion> {
    let k = s.outfit.index_of(slot)?;
    let g = &s.outfit.layers[k].garment;
    if g.pattern_spec.family != PatternFamily::Stripes {
        return None;
    }
    let part = if slot == Category::Bottom { 1 } else { 0 };
    let [x, y, w, h] = *slot.panels().get(part)?;
    region(s, k, |p, [u, v]| p == part && u >= x + 2.0 && u <= x + w - 2.0 && v >= y + 2.0 && v <= y + h - 2.0)
}

impl LandmarkRegion {
    /// The region seen through `view` on an `out_h x out_w` grid (nearest
    /// source pixel).
    pub fn resample(&self, view: View, out_h: usize, out_w: usize) -> LandmarkRegion {
        let (h, w) = (self.member.height, self.member.width);
        let mut member = Mask::new(out_h, out_w);
        let mut garment = Mask::new(out_h, out_w);
        for i in 0..out_h {
            for j in 0..out_w {
                let (x, y) = view.inverse((j as f32 + 0.5, i as f32 + 0.5), out_h, out_w);
                if x < 0.0 || y < 0.0 || x >= w as f32 || y >= h as f32 {
                    continue;
                }
                let (sx, sy) = (x as usize, y as usize);
                member.set(i, j, self.member.get(sy, sx));
                garment.set(i, j, self.garment.get(sy, sx));
            }
        }
        LandmarkRegion { member, garment, depth: self.depth }
    }

    /// `(x, y)` centroid in pixel coordinates; `None` if no pixel carries ink.
    pub fn centroid(&self, img: &FloatImage) -> Option<(f64, f64)> {
        let (h, w) = (img.height as i64, img.width as i64);
        let (mut sw, mut sx, mut sy) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..h {
            for j in 0..w {
                if !self.member.get(i as usize, j as usize) {
                    continue;
                }
                let mut top = 0.0f32;
                for y in (i - WINDOW).max(0)..(i + WINDOW + 1).min(h) {
                    for x in (j - WINDOW).max(0)..(j + WINDOW + 1).min(w) {
                        if self.garment.get(y as usize, x as usize) {
                            top = top.max(img.luminance(y as usize, x as usize));
                        }
                    }
                }
                if top <= 0.0 {
                    continue;
                }
                let r = (1.0 - img.luminance(i as usize, j as usize) / top) / self.depth;
                let wt = ((r - 0.2) / 0.6).clamp(0.0, 1.0) as f64;
                sw += wt;
                sx += wt * (j as f64 + 0.5);
                sy += wt * (i as f64 + 0.5);
            }
        }
        (sw > 1e-9).then(|| (sx / sw, sy / sw))
    }
}

/// Glyph and stripe regions of a ground-truth sample.
pub fn pattern_regions(s: &DressedSample) -> Vec<LandmarkRegion> {
    let mut out = Vec::new();
    for slot in [Category::Top, Category::Dress, Category::Outerwear] {
        out.extend(glyph_region(s, slot));
    }
    for slot in [Category::Bottom] {
        out.extend(stripe_region(s, slot));
    }
    out
}

/// Largest landmark displacement (px) of `img` relative to `truth` over
/// `regions`. A landmark that vanishes in `img` counts as the region's
/// bounding-box diagonal. `None` without landmarks in `truth`.
pub fn landmark_error(img: &FloatImage, truth: &FloatImage, regions: &[LandmarkRegion]) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for r in regions {
        let Some((gx, gy)) = r.centroid(truth) else { continue };
        let d = match r.centroid(img) {
            Some((x, y)) => ((x - gx).powi(2) + (y - gy).powi(2)).sqrt(),
            None => r.member.bbox().map_or(0.0, |(x0, y0, x1, y1)| {
                (((x1 - x0) as f64).powi(2) + ((y1 - y0) as f64).powi(2)).sqrt()
            }),
        };
        worst = Some(worst.map_or(d, |w: f64| w.max(d)));
    }
    worst
}
