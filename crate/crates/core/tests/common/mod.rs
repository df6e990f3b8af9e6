#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use acdg::latentcore::{train_autoencoder, training_corpus, Autoencoder, AutoencoderConfig};
use acdg::synthworld::WorldConfig;

/// Checkpoints written by `scripts/pipeline.sh`; `ACDG_ARTIFACTS` overrides.
pub fn artifacts_dir() -> PathBuf {
    std::env::var_os("ACDG_ARTIFACTS")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../artifacts"))
}

/// The pipeline's autoencoder when present, otherwise a short in-process run.
pub fn trained_autoencoder() -> &'static Autoencoder {
    static AE: OnceLock<Autoencoder> = OnceLock::new();
    AE.get_or_init(|| {
        let p = artifacts_dir().join("autoencoder.safetensors");
        if let Ok(ae) = Autoencoder::load(&p) {
            return ae;
        }
        eprintln!("{} not found; training a short autoencoder", p.display());
        let corpus = training_corpus(0, 120, &WorldConfig::default()).unwrap();
        train_autoencoder(&corpus, &AutoencoderConfig { steps: 2000, ..Default::default() }).unwrap().0
    })
}
