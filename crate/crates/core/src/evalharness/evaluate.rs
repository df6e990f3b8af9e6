//! Held-out evaluation of one trained variant.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::landmarks::{glyph_region, landmark_error, pattern_regions, LandmarkRegion};
use super::metrics::{bootstrap_mean, masked_mse, ncc, ssim, Interval};
use crate::error::{Error, Result};
use crate::inferpipe::{compose_control, generate_batch, zoom_job, Job, ModelBundle, SamplerOptions, ZoomWindow};
use crate::raster::FloatImage;
use crate::synthworld::{gen_avatar, glyph_outfit, random_outfit, render_dressed, render_view, Category, WorldConfig};
use crate::warpkit::Jitter;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeldOutConfig {
    pub start_seed: u64,
    pub count: usize,
    /// Every `glyph_every`-th seed wears the glyph outfit; 1 makes the whole
    /// set glyph outfits.
    pub glyph_every: u64,
    /// Seed of the sampling noise of sample `i` is `noise_seed + i`.
    pub noise_seed: u64,
    pub bootstrap_resamples: usize,
    pub batch: usize,
}

impl Default for HeldOutConfig {
    fn default() -> Self {
        Self { start_seed: 100_000, count: 64, glyph_every: 1, noise_seed: 7, bootstrap_resamples: 2000, batch: 16 }
    }
}

impl HeldOutConfig {
    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.start_seed..self.start_seed + self.count as u64
    }
}

/// Metrics of one held-out sample. Landmark and correlation entries are
/// absent for outfits without a glyph garment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub seed: u64,
    pub glyph: bool,
    pub masked_mse: f64,
    pub ssim: f64,
    pub landmark_px: Option<f64>,
    pub ncc: Option<f64>,
    pub zoom_window: Option<ZoomWindow>,
    /// Zoom-path output against the zoomed re-render.
    pub zoom_ncc: Option<f64>,
    pub zoom_landmark_px: Option<f64>,
    /// The same window cut from the full output and upsampled.
    pub full_crop_ncc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SampleMetrics>,
    /// 90% bootstrap intervals of each metric's mean.
    pub aggregates: BTreeMap<String, Interval>,
}

pub const CI_LEVEL: f64 = 0.9;

impl MetricReport {
    pub fn column(&self, name: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| match name {
                "masked_mse" => Some(r.masked_mse),
                "ssim" => Some(r.ssim),
                "landmark_px" => r.landmark_px,
                "ncc" => r.ncc,
                "zoom_ncc" => r.zoom_ncc,
                "zoom_landmark_px" => r.zoom_landmark_px,
                "full_crop_ncc" => r.full_crop_ncc,
                _ => None,
            })
            .collect()
    }

    pub const METRICS: [&'static str; 7] =
        ["masked_mse", "ssim", "landmark_px", "ncc", "zoom_ncc", "zoom_landmark_px", "full_crop_ncc"];

    /// Recomputes the aggregates from the rows.
    pub fn aggregate(&mut self, resamples: usize) {
        self.aggregates.clear();
        for (k, name) in Self::METRICS.iter().enumerate() {
            if let Some(iv) = bootstrap_mean(&self.column(name), resamples, CI_LEVEL, 0xb007 + k as u64) {
                self.aggregates.insert(name.to_string(), iv);
            }
        }
    }

    /// Averages each held-out sample over several reports (one per training
    /// seed), so the intervals resample held-out samples only.
    pub fn seed_averaged(variant: &str, reports: &[MetricReport], resamples: usize) -> MetricReport {
        let mut by_seed: BTreeMap<u64, Vec<&SampleMetrics>> = BTreeMap::new();
        for r in reports.iter().flat_map(|r| &r.rows) {
            by_seed.entry(r.seed).or_default().push(r);
        }
        let rows = by_seed
            .into_iter()
            .map(|(seed, rs)| {
                let n = rs.len() as f64;
                let opt = |f: fn(&SampleMetrics) -> Option<f64>| {
                    let v: Vec<f64> = rs.iter().filter_map(|r| f(r)).collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                };
                SampleMetrics {
                    seed,
                    glyph: rs[0].glyph,
                    masked_mse: rs.iter().map(|r| r.masked_mse).sum::<f64>() / n,
                    ssim: rs.iter().map(|r| r.ssim).sum::<f64>() / n,
                    landmark_px: opt(|r| r.landmark_px),
                    ncc: opt(|r| r.ncc),
                    zoom_window: rs[0].zoom_window,
                    zoom_ncc: opt(|r| r.zoom_ncc),
                    zoom_landmark_px: opt(|r| r.zoom_landmark_px),
                    full_crop_ncc: opt(|r| r.full_crop_ncc),
                }
            })
            .collect();
        let mut out = MetricReport {
            variant: variant.to_string(),
            seeds: reports.iter().flat_map(|r| r.seeds.clone()).collect(),
            rows,
            aggregates: BTreeMap::new(),
        };
        out.aggregate(resamples);
        out
    }
}

/// Everything the metrics need about one held-out sample.
pub struct HeldOutSample {
    pub seed: u64,
    pub truth: FloatImage,
    pub garment: crate::raster::Mask,
    pub regions: Vec<LandmarkRegion>,
    pub control: FloatImage,
    pub joints: FloatImage,
    pub zoom: Option<ZoomCase>,
}

pub struct ZoomCase {
    pub window: ZoomWindow,
    pub truth: FloatImage,
    pub glyph: LandmarkRegion,
    pub regions: Vec<LandmarkRegion>,
}

/// Zoom window of half the frame size centred on `region`, clamped to the
/// frame.
pub fn zoom_window_for(region: &LandmarkRegion, height: usize, width: usize) -> Option<ZoomWindow> {
    let (x0, y0, x1, y1) = region.member.bbox()?;
    let (w, h) = (width / 2, height / 2);
    let cx = (x0 + x1) as f64 / 2.0;
    let cy = (y0 + y1) as f64 / 2.0;
    let x = (cx - w as f64 / 2.0).round().clamp(0.0, (width - w) as f64) as u32;
    let y = (cy - h as f64 / 2.0).round().clamp(0.0, (height - h) as f64) as u32;
    Some(ZoomWindow { x, y, w: w as u32, h: h as u32 })
}

pub fn build_heldout(cfg: &HeldOutConfig, world: &WorldConfig) -> Result<Vec<HeldOutSample>> {
    cfg.seeds()
        .map(|s| {
            let avatar = gen_avatar(s, world)?;
            let glyph = cfg.glyph_every > 0 && s % cfg.glyph_every == 0;
            let outfit = if glyph { glyph_outfit(s)? } else { random_outfit(s)? };
            let dressed = render_dressed(&avatar, &outfit)?;
            let composed = compose_control(&outfit, &avatar, Jitter::none())?;
            let zoom = match glyph_region(&dressed, Category::Top) {
                Some(r) => {
                    let window = zoom_window_for(&r, world.height, world.width)
                        .ok_or_else(|| Error::Composition("glyph region has no pixels".into()))?;
                    let zd = render_view(&avatar, &outfit, window.view(), world.height, world.width)?;
                    let glyph = glyph_region(&zd, Category::Top)
                        .ok_or_else(|| Error::Composition(format!("seed {s}: glyph lost in zoom window")))?;
                    Some(ZoomCase { window, regions: pattern_regions(&zd), truth: zd.image, glyph })
                }
                None => None,
            };
            Ok(HeldOutSample {
                seed: s,
                regions: pattern_regions(&dressed),
                garment: dressed.garment_mask(),
                truth: dressed.image,
                control: composed.control.image,
                joints: composed.joints,
                zoom,
            })
        })
        .collect()
}

/// Scores generated images against the held-out ground truth.
pub fn score(sample: &HeldOutSample, full: &FloatImage, zoomed: Option<&FloatImage>) -> SampleMetrics {
    let (h, w) = (full.height, full.width);
    let glyph_full = sample.regions.first();
    let mut m = SampleMetrics {
        seed: sample.seed,
        glyph: sample.zoom.is_some(),
        masked_mse: masked_mse(full, &sample.truth, &sample.garment).unwrap_or(0.0),
        ssim: ssim(full, &sample.truth),
        landmark_px: landmark_error(full, &sample.truth, &sample.regions),
        ncc: glyph_full.and_then(|r| ncc(full, &sample.truth, &r.member)),
        zoom_window: None,
        zoom_ncc: None,
        zoom_landmark_px: None,
        full_crop_ncc: None,
    };
    if let (Some(z), Some(img)) = (&sample.zoom, zoomed) {
        m.zoom_window = Some(z.window);
        m.zoom_ncc = ncc(img, &z.truth, &z.glyph.member);
        m.zoom_landmark_px = landmark_error(img, &z.truth, &z.regions);
        let crop = full.resample_view(z.window.view(), h, w);
        m.full_crop_ncc = ncc(&crop, &z.truth, &z.glyph.member);
    }
    m
}

/// Generates and scores every held-out sample (full and, for glyph outfits,
/// zoom path).
pub fn evaluate_samples(
    bundle: &ModelBundle,
    label: &str,
    samples: &[HeldOutSample],
    cfg: &HeldOutConfig,
) -> Result<(MetricReport, Vec<(FloatImage, Option<FloatImage>)>)> {
    let mut rows = Vec::with_capacity(samples.len());
    let mut images = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(cfg.batch.max(1)) {
        let mut jobs = Vec::new();
        for s in chunk {
            let seed = cfg.noise_seed + (s.seed - cfg.start_seed);
            jobs.push(Job { control: s.control.clone(), joints: s.joints.clone(), seed });
            if let Some(z) = &s.zoom {
                jobs.push(zoom_job(&s.control, &s.joints, z.window, seed)?);
            }
        }
        let mut out = generate_batch(bundle, &jobs, SamplerOptions::default())?.into_iter();
        for s in chunk {
            let full = out.next().expect("one result per job").image;
            let zoomed = if s.zoom.is_some() { Some(out.next().expect("zoom result").image) } else { None };
            rows.push(score(s, &full, zoomed.as_ref()));
            images.push((full, zoomed));
        }
    }
    let mut report = MetricReport { variant: label.to_string(), seeds: vec![bundle.model.card.train.seed], rows, aggregates: BTreeMap::new() };
    report.aggregate(cfg.bootstrap_resamples);
    Ok((report, images))
}

/// Rejects held-out seeds that overlap the model's training seeds.
pub fn check_leakage(bundle: &ModelBundle, cfg: &HeldOutConfig) -> Result<()> {
    let train = bundle.model.card.data.seeds();
    let held = cfg.seeds();
    if train.start < held.end && held.start < train.end {
        return Err(Error::Leakage(format!(
            "held-out seeds {}..{} overlap training seeds {}..{}",
            held.start, held.end, train.start, train.end
        )));
    }
    Ok(())
}

/// Evaluates one checkpoint on a held-out set.
pub fn evaluate(bundle: &ModelBundle, cfg: &HeldOutConfig) -> Result<MetricReport> {
    check_leakage(bundle, cfg)?;
    let world = WorldConfig::new(bundle.height(), bundle.width())?;
    let samples = build_heldout(cfg, &world)?;
    let label = bundle.model.card.variant.name();
    Ok(evaluate_samples(bundle, label, &samples, cfg)?.0)
}
