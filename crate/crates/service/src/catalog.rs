//! Avatars and garments the service can dress.

use std::collections::BTreeMap;

use acdg::raster::{encode_png, sha256_hex};
use acdg::synthworld::{
    gen_avatar, glyph_outfit, random_outfit, AvatarSample, Category, GarmentAsset, GarmentSpec, Manifest, PatternFamily,
    WorldConfig,
};
use base64::Engine;
use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::config::ServiceConfig;

/// A PNG raster addressed by the SHA-256 of its bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Raster {
    pub sha256: String,
    pub png_base64: String,
}

impl Raster {
    pub fn from_rgb(img: &RgbImage) -> acdg::Result<Self> {
        let bytes = encode_png(img)?;
        Ok(Self { sha256: sha256_hex(&bytes), png_base64: base64::engine::general_purpose::STANDARD.encode(&bytes) })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AvatarEntry {
    pub id: u64,
    pub thumbnail: Raster,
}

#[derive(Clone, Debug, Serialize)]
pub struct GarmentEntry {
    pub id: String,
    pub category: Category,
    pattern: PatternFamily,
    pub thumbnail: Raster,
}

pub struct Catalog {
    pub world: WorldConfig,
    pub avatars: BTreeMap<u64, (AvatarSample, AvatarEntry)>,
    pub garments: BTreeMap<String, (GarmentAsset, GarmentEntry)>,
}

/// Content address of a garment: a digest of its generating spec.
pub fn garment_id(g: &GarmentAsset) -> String {
    let spec = GarmentSpec::from(g.clone());
    let json = serde_json::to_string(&spec).expect("garment spec serializes");
    format!("g{}", &sha256_hex(json.as_bytes())[..12])
}

fn flatten_on_white(g: &GarmentAsset) -> RgbImage {
    RgbImage::from_fn(g.product_image.width(), g.product_image.height(), |x, y| {
        let p = g.product_image.get_pixel(x, y).0;
        let a = p[3] as f32 / 255.0;
        Rgb(std::array::from_fn(|c| (p[c] as f32 * a + 255.0 * (1.0 - a)).round() as u8))
    })
}

impl Catalog {
    pub fn build(cfg: &ServiceConfig) -> acdg::Result<Self> {
        let (world, avatar_seeds, outfits) = match &cfg.dataset_dir {
            Some(dir) => {
                let m = Manifest::load(dir)?;
                let seeds: Vec<u64> = m.records.iter().map(|r| r.seed).collect();
                let outfits = m.records.iter().map(|r| r.outfit.clone()).collect();
                (m.config(), seeds, outfits)
            }
            None => {
                let world = WorldConfig::new(cfg.height, cfg.width)?;
                let mut outfits = Vec::new();
                for s in 0..cfg.garment_seeds as u64 {
                    outfits.push(glyph_outfit(s)?);
                    outfits.push(random_outfit(s)?);
                }
                (world, (0..cfg.avatars as u64).collect(), outfits)
            }
        };
        let mut avatars = BTreeMap::new();
        for s in avatar_seeds {
            let a = gen_avatar(s, &world)?;
            let thumbnail = Raster::from_rgb(&a.body_image.to_rgb())?;
            avatars.insert(s, (a, AvatarEntry { id: s, thumbnail }));
        }
        let mut garments = BTreeMap::new();
        for layer in outfits.into_iter().flat_map(|o| o.layers) {
            let g = layer.garment;
            let id = garment_id(&g);
            if garments.contains_key(&id) {
                continue;
            }
            let entry = GarmentEntry {
                id: id.clone(),
                category: g.category,
                pattern: g.pattern_spec.family,
                thumbnail: Raster::from_rgb(&flatten_on_white(&g))?,
            };
            garments.insert(id, (g, entry));
        }
        Ok(Self { world, avatars, garments })
    }
}
