//! File-based training setup shared by the command-line tools.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::{build_examples, train_denoiser, DataConfig, ModelCard, ScheduleConfig, TrainConfig, TrainReport, Variant};
use super::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::inferpipe::{AUTOENCODER_FILE, DENOISER_FILE};
use crate::latentcore::Autoencoder;
use crate::warpkit::{GarmentReverser, PerfectReverser, ReverseWarp};

pub const REPORT_FILE: &str = "train_report.json";

/// TOML training setup. Relative paths resolve against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    pub autoencoder: PathBuf,
    /// Reverse-warp checkpoint used to simulate incomplete images; without
    /// one the exact inverse shading is used.
    #[serde(default)]
    pub reverse_warp: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
}

impl TrainSetup {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read training config {}: {e}", path.display())))?;
        let mut s: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        s.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(s)
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        self.autoencoder = base.join(&self.autoencoder);
        self.out_dir = base.join(&self.out_dir);
        self.reverse_warp = self.reverse_warp.as_ref().map(|p| base.join(p));
    }

    pub fn card(&self, variant: Variant, seed: u64) -> ModelCard {
        let mut train = self.train.clone();
        train.seed = seed;
        if !variant.zoom() {
            train.zoom_probability = 0.0;
        }
        ModelCard {
            variant,
            schedule: self.schedule.clone(),
            denoiser: self.denoiser.clone(),
            train,
            data: self.data.clone(),
        }
    }

    /// Checkpoint directory of one run: autoencoder, denoiser and report.
    pub fn run_dir(&self, variant: Variant, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{}-s{seed}", variant.name()))
    }

    pub fn reverser(&self) -> Result<Box<dyn GarmentReverser>> {
        Ok(match &self.reverse_warp {
            Some(p) => Box::new(ReverseWarp::load(p)?),
            None => Box::new(PerfectReverser),
        })
    }
}

/// Trains one variant and writes its run directory. Returns the directory.
pub fn train_run(setup: &TrainSetup, variant: Variant, seed: u64) -> Result<(PathBuf, TrainReport)> {
    let ae = Autoencoder::load(&setup.autoencoder)?;
    let card = setup.card(variant, seed);
    let examples = build_examples(&card.data, variant, setup.reverser()?.as_ref())?;
    tracing::info!(%variant, seed, examples = examples.len(), steps = card.train.steps, "training denoiser");
    let (model, report) = train_denoiser(&examples, &ae, &card)?;
    let dir = setup.run_dir(variant, seed);
    fs::create_dir_all(&dir)?;
    let steps = card.train.steps;
    let extra = BTreeMap::from([
        ("final_loss".to_string(), format!("{:.6}", report.losses.mean(steps.saturating_sub(100)..steps))),
        ("seconds".to_string(), format!("{:.1}", report.seconds)),
    ]);
    model.save(&dir.join(DENOISER_FILE), &extra)?;
    fs::copy(&setup.autoencoder, dir.join(AUTOENCODER_FILE))?;
    fs::write(dir.join(REPORT_FILE), serde_json::to_string(&report)?)?;
    Ok((dir, report))
}
