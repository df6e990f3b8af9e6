use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Directory holding `autoencoder.safetensors` and `denoiser.safetensors`.
    pub checkpoint_dir: PathBuf,
    /// A synthworld dataset whose avatars and garments form the catalog.
    /// Without one the catalog is generated from seeds.
    pub dataset_dir: Option<PathBuf>,
    pub runs_dir: PathBuf,
    /// Generation requests admitted at once, running or waiting.
    pub queue_capacity: usize,
    pub workers: usize,
    pub avatars: usize,
    pub garment_seeds: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            checkpoint_dir: "checkpoints/acdg-s0".into(),
            dataset_dir: None,
            runs_dir: "runs".into(),
            queue_capacity: 4,
            workers: 1,
            avatars: 12,
            garment_seeds: 12,
            height: 96,
            width: 64,
        }
    }
}

pub const ENV_VARS: [&str; 6] =
    ["TRYON_HOST", "TRYON_PORT", "TRYON_CHECKPOINT_DIR", "TRYON_DATASET_DIR", "TRYON_RUNS_DIR", "TRYON_QUEUE_CAPACITY"];

impl ServiceConfig {
    /// Reads the TOML file (if any), then applies `TRYON_*` overrides from the
    /// process environment.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut c = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Self::default(),
        };
        c.apply_env(|k| std::env::var(k).ok())?;
        Ok(c)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> anyhow::Result<()> {
        if let Some(v) = get("TRYON_HOST") {
            self.host = v;
        }
        if let Some(v) = get("TRYON_PORT") {
            self.port = v.parse().with_context(|| format!("TRYON_PORT={v}"))?;
        }
        if let Some(v) = get("TRYON_CHECKPOINT_DIR") {
            self.checkpoint_dir = v.into();
        }
        if let Some(v) = get("TRYON_DATASET_DIR") {
            self.dataset_dir = Some(v.into());
        }
        if let Some(v) = get("TRYON_RUNS_DIR") {
            self.runs_dir = v.into();
        }
        if let Some(v) = get("TRYON_QUEUE_CAPACITY") {
            self.queue_capacity = v.parse().with_context(|| format!("TRYON_QUEUE_CAPACITY={v}"))?;
        }
        Ok(())
    }
}
