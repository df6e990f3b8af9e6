//! Versioned weight files: safetensors tensors plus a metadata envelope
//! carrying the model kind, its config as JSON and the config digest.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use acdg_grad::ParamStore;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::sha256_hex;

pub const FORMAT_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub kind: String,
    pub config_json: String,
    pub config_hash: String,
    pub extra: BTreeMap<String, String>,
}

impl Envelope {
    pub fn config<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_str(&self.config_json)?)
    }
}

/// Digest of a config's canonical JSON.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let v = serde_json::to_value(config).expect("config serializes");
    sha256_hex(v.to_string().as_bytes())
}

pub fn encode<T: Serialize>(
    kind: &str,
    config: &T,
    store: &ParamStore<f32>,
    extra: &BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    let mut meta: HashMap<String, String> = extra.iter().map(|(k, v)| (format!("x.{k}"), v.clone())).collect();
    meta.insert("format".into(), FORMAT_VERSION.into());
    meta.insert("kind".into(), kind.into());
    meta.insert("config".into(), serde_json::to_value(config)?.to_string());
    meta.insert("config_hash".into(), config_hash(config));
    Ok(store.to_safetensors(meta)?)
}

pub fn save<T: Serialize>(
    path: &Path,
    kind: &str,
    config: &T,
    store: &ParamStore<f32>,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let bytes = encode(kind, config, store, extra)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads the envelope and checks format, kind and config digest.
pub fn read_envelope(bytes: &[u8], kind: &str) -> Result<Envelope> {
    let meta = acdg_grad::io::read_metadata(bytes)?;
    let get = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Checkpoint(format!("metadata lacks '{k}'")));
    let format = get("format")?;
    if format != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("format version {format}, expected {FORMAT_VERSION}")));
    }
    let found = get("kind")?;
    if found != kind {
        return Err(Error::Checkpoint(format!("checkpoint holds a {found}, expected a {kind}")));
    }
    let config_json = get("config")?;
    let config_hash = get("config_hash")?;
    let value: serde_json::Value = serde_json::from_str(&config_json)?;
    if sha256_hex(value.to_string().as_bytes()) != config_hash {
        return Err(Error::Checkpoint("config digest mismatch".into()));
    }
    let extra = meta.iter().filter_map(|(k, v)| k.strip_prefix("x.").map(|k| (k.to_string(), v.clone()))).collect();
    Ok(Envelope { kind: found, config_json, config_hash, extra })
}

pub fn read(path: &Path, kind: &str) -> Result<(Envelope, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let env = read_envelope(&bytes, kind)?;
    Ok((env, bytes))
}

/// Fills `store` (built from the envelope's config) with the file's tensors.
pub fn load_weights(store: &mut ParamStore<f32>, bytes: &[u8]) -> Result<()> {
    store.load_safetensors(bytes)?;
    Ok(())
}
