//! Corpus sampling and the on-disk manifest.
//!
//! Layout: `manifest.jsonl` whose first line is a [`ManifestHeader`] and every
//! following line a [`SampleRecord`], next to lossless PNGs per sample.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::garment::{contrast_pair, gen_garment, light_dark_pair, random_glyph_text, random_pattern};
use super::{
    gen_avatar, labels, render_dressed, AvatarSample, Category, DressedSample, Fit, Layer, OutfitComposition,
    PatternSpec, StyleFlags, WorldConfig,
};
use crate::error::{Error, Result};
use crate::raster::{save_png_gray, save_png_rgb, sha256_hex};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const FORMAT: &str = "acdg-synthworld/1";

fn garment_seed(sample_seed: u64, category: Category) -> u64 {
    sample_seed.wrapping_mul(16).wrapping_add(category as u64 + 1)
}

fn fit(rng: &mut ChaCha8Rng) -> Fit {
    if rng.random_bool(0.5) {
        Fit::Loose
    } else {
        Fit::Tight
    }
}

/// Random outfit for avatar `seed`; always valid.
pub fn random_outfit(seed: u64) -> Result<OutfitComposition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7f17_0000_5151);
    let make = |rng: &mut ChaCha8Rng, cat: Category, style: StyleFlags| -> Result<Layer> {
        let pattern = random_pattern(rng, cat);
        Ok(Layer::new(gen_garment(garment_seed(seed, cat), cat, &pattern)?).with_style(style))
    };
    let mut layers = Vec::new();
    if rng.random_bool(0.5) {
        layers.push(make(&mut rng, Category::Shoes, StyleFlags::default())?);
    }
    if rng.random_bool(0.2) {
        let style = StyleFlags { fit: fit(&mut rng), ..Default::default() };
        layers.push(make(&mut rng, Category::Dress, style)?);
    } else {
        let bottom_style = StyleFlags { fit: fit(&mut rng), ..Default::default() };
        let bottom = make(&mut rng, Category::Bottom, bottom_style)?;
        let top_style = StyleFlags { tucked: rng.random_bool(0.4), fit: fit(&mut rng), ..Default::default() };
        let top = make(&mut rng, Category::Top, top_style)?;
        if rng.random_bool(0.5) {
            layers.extend([bottom, top]);
        } else {
            layers.extend([top, bottom]);
        }
    }
    if rng.random_bool(0.3) {
        let style = StyleFlags { open: rng.random_bool(0.5), fit: fit(&mut rng), ..Default::default() };
        layers.push(make(&mut rng, Category::Outerwear, style)?);
    }
    Ok(OutfitComposition::new(seed, layers))
}

/// High-frequency evaluation outfit: a glyph top over a striped bottom,
/// light bases with dark ink.
pub fn glyph_outfit(seed: u64) -> Result<OutfitComposition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c79_7068);
    let (base, ink) = light_dark_pair(&mut rng);
    let text = random_glyph_text(&mut rng, 3);
    let top = gen_garment(garment_seed(seed, Category::Top), Category::Top, &PatternSpec::glyph(&text, 1, base, ink))?;
    let (sb, si) = light_dark_pair(&mut rng);
    let stripes = PatternSpec { vertical: rng.random_bool(0.5), ..PatternSpec::stripes(rng.random_range(6.0..10.0f32).round(), sb, si) };
    let bottom = gen_garment(garment_seed(seed, Category::Bottom), Category::Bottom, &stripes)?;
    let mut layers = Vec::new();
    if rng.random_bool(0.5) {
        let (a, _) = contrast_pair(&mut rng);
        layers.push(Layer::new(gen_garment(garment_seed(seed, Category::Shoes), Category::Shoes, &PatternSpec::solid(a))?));
    }
    layers.push(Layer::new(bottom));
    layers.push(Layer::new(top));
    Ok(OutfitComposition::new(seed, layers))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub height: usize,
    pub width: usize,
    pub legend: Vec<(u8, String)>,
    pub seed_start: u64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub image: String,
    pub body: String,
    pub parsing: String,
    pub joints: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub seed: u64,
    pub outfit: OutfitComposition,
    pub files: SampleFiles,
    /// SHA-256 of the dressed image's raw RGB bytes.
    pub image_digest: String,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub dir: PathBuf,
    pub header: ManifestHeader,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn config(&self) -> WorldConfig {
        WorldConfig { height: self.header.height, width: self.header.width }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let file = fs::File::open(&path)
            .map_err(|e| Error::Config(format!("cannot open manifest {}: {e}", path.display())))?;
        let mut lines = BufReader::new(file).lines();
        let header: ManifestHeader = match lines.next() {
            Some(l) => serde_json::from_str(&l?)?,
            None => return Err(Error::Config(format!("manifest {} is empty", path.display()))),
        };
        if header.format != FORMAT {
            return Err(Error::Config(format!("unsupported manifest format '{}'", header.format)));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { dir: dir.to_path_buf(), header, records })
    }

    /// Regenerates a record and checks it against the stored digest.
    pub fn realize(&self, record: &SampleRecord) -> Result<(AvatarSample, DressedSample)> {
        let avatar = gen_avatar(record.seed, &self.config())?;
        let dressed = render_dressed(&avatar, &record.outfit)?;
        let digest = sha256_hex(dressed.image.to_rgb().as_raw());
        if digest != record.image_digest {
            return Err(Error::Config(format!("sample {} does not reproduce its stored digest", record.id)));
        }
        Ok((avatar, dressed))
    }
}

/// Writes `count` samples with seeds `seed..seed+count` into `dir`.
pub fn generate_dataset(dir: &Path, count: usize, seed: u64, config: &WorldConfig) -> Result<Manifest> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    let header = ManifestHeader {
        format: FORMAT.to_string(),
        height: config.height,
        width: config.width,
        legend: labels::LEGEND.iter().map(|&(l, n)| (l, n.to_string())).collect(),
        seed_start: seed,
        count,
    };
    let mut out = BufWriter::new(fs::File::create(dir.join(MANIFEST_FILE))?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut records = Vec::with_capacity(count);
    for s in seed..seed + count as u64 {
        let id = format!("s{s:07}");
        let avatar = gen_avatar(s, config)?;
        let outfit = random_outfit(s)?;
        let dressed = render_dressed(&avatar, &outfit)?;
        let files = SampleFiles {
            image: format!("{id}_image.png"),
            body: format!("{id}_body.png"),
            parsing: format!("{id}_parsing.png"),
            joints: format!("{id}_joints.png"),
        };
        let rgb = dressed.image.to_rgb();
        save_png_rgb(&rgb, &dir.join(&files.image))?;
        save_png_rgb(&avatar.body_image.to_rgb(), &dir.join(&files.body))?;
        save_png_gray(&dressed.parsing.to_gray(), &dir.join(&files.parsing))?;
        save_png_gray(&avatar.joints.to_gray(), &dir.join(&files.joints))?;
        let record = SampleRecord { id, seed: s, outfit, files, image_digest: sha256_hex(rgb.as_raw()) };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
        records.push(record);
    }
    out.flush()?;
    Ok(Manifest { dir: dir.to_path_buf(), header, records })
}
