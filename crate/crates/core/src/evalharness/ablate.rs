//! The ablation battery: train (or reuse) every variant for several seeds,
//! evaluate each on the held-out set and compare against ACDG.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::evaluate::{build_heldout, check_leakage, evaluate_samples, HeldOutConfig, HeldOutSample, MetricReport};
use super::metrics::Interval;
use crate::diffcore::{train_run, TrainSetup, Variant};
use crate::error::{Error, Result};
use crate::inferpipe::{ModelBundle, DENOISER_FILE};
use crate::raster::{save_png_rgb, sha256_hex, FloatImage};
use crate::synthworld::WorldConfig;

const METRICS_FILE: &str = "heldout_metrics.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationOptions {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Train runs whose checkpoint is absent instead of failing.
    pub train_missing: bool,
    /// Held-out samples shown in the comparison grids.
    pub grid_rows: usize,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self { variants: Variant::ALL.to_vec(), seeds: vec![0, 1, 2], train_missing: true, grid_rows: 4 }
    }
}

/// Training setup plus `[ablation]` and `[heldout]` tables, in one TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    #[serde(flatten)]
    pub setup: TrainSetup,
    #[serde(default)]
    pub ablation: AblationOptions,
    #[serde(default)]
    pub heldout: HeldOutConfig,
}

impl AblationConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read ablation config {}: {e}", path.display())))?;
        let mut c: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        c.setup.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(c)
    }

    pub fn runs(&self) -> impl Iterator<Item = (Variant, u64)> + '_ {
        self.ablation.variants.iter().flat_map(|&v| self.ablation.seeds.iter().map(move |&s| (v, s)))
    }

    pub fn missing_runs(&self) -> Vec<(Variant, u64)> {
        self.runs().filter(|&(v, s)| !self.setup.run_dir(v, s).join(DENOISER_FILE).exists()).collect()
    }
}

/// ACDG against one baseline on a lower-is-better metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub baseline: Variant,
    pub acdg: Interval,
    pub other: Interval,
    /// ACDG's interval lies entirely below the baseline's.
    pub acdg_better: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub seed: u64,
    pub dir: PathBuf,
    pub aggregates: BTreeMap<String, Interval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub heldout: HeldOutConfig,
    pub runs: Vec<RunSummary>,
    /// Per variant, each held-out sample averaged over training seeds.
    pub variants: BTreeMap<Variant, MetricReport>,
    pub comparisons: Vec<Comparison>,
    /// Share of zoom-path glyph samples where ACDG's correlation beats the
    /// no-zoom variant's.
    pub zoom_win_rate: Option<f64>,
}

impl AblationReport {
    pub fn comparison(&self, metric: &str, baseline: Variant) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.metric == metric && c.baseline == baseline)
    }
}

pub const COMPARED_METRICS: [&str; 2] = ["masked_mse", "landmark_px"];

#[derive(Serialize, Deserialize)]
struct CachedMetrics {
    heldout: HeldOutConfig,
    denoiser_sha256: String,
    report: MetricReport,
}

fn evaluate_run(dir: &Path, cfg: &HeldOutConfig, samples: &[HeldOutSample]) -> Result<MetricReport> {
    let cache = dir.join(METRICS_FILE);
    let digest = sha256_hex(&fs::read(dir.join(DENOISER_FILE))?);
    if let Ok(text) = fs::read_to_string(&cache) {
        if let Ok(c) = serde_json::from_str::<CachedMetrics>(&text) {
            if &c.heldout == cfg && c.denoiser_sha256 == digest {
                return Ok(c.report);
            }
        }
    }
    let bundle = ModelBundle::load(dir)?;
    check_leakage(&bundle, cfg)?;
    let (report, _) = evaluate_samples(&bundle, bundle.model.card.variant.name(), samples, cfg)?;
    fs::write(&cache, serde_json::to_string(&CachedMetrics { heldout: cfg.clone(), denoiser_sha256: digest, report: report.clone() })?)?;
    Ok(report)
}

fn compare(variants: &BTreeMap<Variant, MetricReport>) -> Vec<Comparison> {
    let Some(acdg) = variants.get(&Variant::Acdg) else { return Vec::new() };
    let mut out = Vec::new();
    for (&baseline, other) in variants {
        if baseline == Variant::Acdg {
            continue;
        }
        for metric in COMPARED_METRICS {
            if let (Some(a), Some(o)) = (acdg.aggregates.get(metric), other.aggregates.get(metric)) {
                out.push(Comparison {
                    metric: metric.to_string(),
                    baseline,
                    acdg: *a,
                    other: *o,
                    acdg_better: a.hi < o.lo,
                });
            }
        }
    }
    out
}

fn zoom_win_rate(variants: &BTreeMap<Variant, MetricReport>) -> Option<f64> {
    let (a, b) = (variants.get(&Variant::Acdg)?, variants.get(&Variant::NoZoom)?);
    let theirs: BTreeMap<u64, f64> = b.rows.iter().filter_map(|r| Some((r.seed, r.zoom_ncc?))).collect();
    let pairs: Vec<(f64, f64)> = a.rows.iter().filter_map(|r| Some((r.zoom_ncc?, *theirs.get(&r.seed)?))).collect();
    (!pairs.is_empty()).then(|| pairs.iter().filter(|(x, y)| x > y).count() as f64 / pairs.len() as f64)
}

/// Runs the battery and writes `report.json` plus comparison grids to `out`.
pub fn run_ablation(cfg: &AblationConfig, out: &Path) -> Result<AblationReport> {
    let missing = cfg.missing_runs();
    if !missing.is_empty() && !cfg.ablation.train_missing {
        return Err(Error::MissingVariants(missing.iter().map(|(v, s)| format!("{v}-s{s}")).collect()));
    }
    let held = cfg.setup.data.seeds();
    let eval = cfg.heldout.seeds();
    if held.start < eval.end && eval.start < held.end {
        return Err(Error::Leakage(format!(
            "held-out seeds {}..{} overlap training seeds {}..{}",
            eval.start, eval.end, held.start, held.end
        )));
    }
    for &(v, s) in &missing {
        train_run(&cfg.setup, v, s)?;
    }
    fs::create_dir_all(out)?;
    let world = WorldConfig::new(cfg.setup.data.height, cfg.setup.data.width)?;
    let samples = build_heldout(&cfg.heldout, &world)?;
    let mut runs = Vec::new();
    let mut per_variant: BTreeMap<Variant, Vec<MetricReport>> = BTreeMap::new();
    for (v, s) in cfg.runs() {
        let dir = cfg.setup.run_dir(v, s);
        tracing::info!(variant = %v, seed = s, "evaluating");
        let report = evaluate_run(&dir, &cfg.heldout, &samples)?;
        runs.push(RunSummary { variant: v, seed: s, dir, aggregates: report.aggregates.clone() });
        per_variant.entry(v).or_default().push(report);
    }
    let variants: BTreeMap<Variant, MetricReport> = per_variant
        .into_iter()
        .map(|(v, reps)| (v, MetricReport::seed_averaged(v.name(), &reps, cfg.heldout.bootstrap_resamples)))
        .collect();
    let report = AblationReport {
        heldout: cfg.heldout.clone(),
        runs,
        comparisons: compare(&variants),
        zoom_win_rate: zoom_win_rate(&variants),
        variants,
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    write_grids(cfg, &samples, out)?;
    Ok(report)
}

/// `grid_full.png` and `grid_zoom.png`: one row per held-out sample; columns
/// are the control, the ground truth and each variant's first-seed output.
fn write_grids(cfg: &AblationConfig, samples: &[HeldOutSample], out: &Path) -> Result<()> {
    let rows = &samples[..cfg.ablation.grid_rows.min(samples.len())];
    if rows.is_empty() {
        return Ok(());
    }
    let Some(&seed) = cfg.ablation.seeds.first() else { return Ok(()) };
    let mut full: Vec<Vec<FloatImage>> = rows.iter().map(|s| vec![s.control.clone(), s.truth.clone()]).collect();
    let mut zoom: Vec<Vec<FloatImage>> = rows
        .iter()
        .filter_map(|s| s.zoom.as_ref().map(|z| vec![s.control.resample_view(z.window.view(), s.control.height, s.control.width), z.truth.clone()]))
        .collect();
    for &v in &cfg.ablation.variants {
        let bundle = ModelBundle::load(&cfg.setup.run_dir(v, seed))?;
        let (_, imgs) = evaluate_samples(&bundle, v.name(), rows, &cfg.heldout)?;
        let mut zi = 0;
        for (k, (f, z)) in imgs.into_iter().enumerate() {
            full[k].push(f);
            if let Some(z) = z {
                zoom[zi].push(z);
                zi += 1;
            }
        }
    }
    save_png_rgb(&tile(&full), &out.join("grid_full.png"))?;
    if !zoom.is_empty() {
        save_png_rgb(&tile(&zoom), &out.join("grid_zoom.png"))?;
    }
    Ok(())
}

fn tile(cells: &[Vec<FloatImage>]) -> RgbImage {
    const GAP: u32 = 2;
    let (h, w) = (cells[0][0].height as u32, cells[0][0].width as u32);
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let mut img = RgbImage::from_pixel(cols * (w + GAP) + GAP, cells.len() as u32 * (h + GAP) + GAP, Rgb([255, 255, 255]));
    for (r, row) in cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let (x0, y0) = (GAP + c as u32 * (w + GAP), GAP + r as u32 * (h + GAP));
            for (x, y, p) in cell.to_rgb().enumerate_pixels() {
                img.put_pixel(x0 + x, y0 + y, *p);
            }
        }
    }
    img
}
