//! Ordered garment layers with styling flags.

use serde::{Deserialize, Serialize};

use super::garment::{Category, Fit, GarmentAsset};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StyleFlags {
    #[serde(default)]
    pub tucked: bool,
    #[serde(default)]
    pub open: bool,
    #[serde(default)]
    pub fit: Fit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub garment: GarmentAsset,
    pub slot: Category,
    #[serde(default)]
    pub style: StyleFlags,
}

impl Layer {
    pub fn new(garment: GarmentAsset) -> Self {
        let slot = garment.category;
        Self { garment, slot, style: StyleFlags::default() }
    }

    pub fn with_style(mut self, style: StyleFlags) -> Self {
        self.style = style;
        self
    }
}

/// Integer rectangle in base-image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Layers are listed bottom to top: later layers occlude earlier ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutfitComposition {
    pub layers: Vec<Layer>,
    /// Seed of the avatar the outfit is meant for.
    pub avatar: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoom: Option<Rect>,
}

/// One rule violation, addressed to a layer when it has one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub layer: Option<usize>,
    pub code: String,
    pub message: String,
}

impl ValidationIssue {
    fn new(layer: Option<usize>, code: &str, message: String) -> Self {
        Self { layer, code: code.to_string(), message }
    }
}

impl OutfitComposition {
    pub fn new(avatar: u64, layers: Vec<Layer>) -> Self {
        Self { layers, avatar, zoom: None }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn index_of(&self, slot: Category) -> Option<usize> {
        self.layers.iter().position(|l| l.slot == slot)
    }

    /// Every rule violation, in layer order.
    pub fn issues(&self) -> Vec<ValidationIssue> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if l.slot != l.garment.category {
                out.push(ValidationIssue::new(
                    Some(i),
                    "slot-mismatch",
                    format!("{} garment placed in {} slot", l.garment.category, l.slot),
                ));
            }
            if l.style.tucked && l.slot != Category::Top {
                out.push(ValidationIssue::new(Some(i), "flag-not-applicable", format!("tucked applies to tops, not {}", l.slot)));
            }
            if l.style.open && l.slot != Category::Outerwear {
                out.push(ValidationIssue::new(
                    Some(i),
                    "flag-not-applicable",
                    format!("open applies to outerwear, not {}", l.slot),
                ));
            }
            if self.layers[..i].iter().any(|e| e.slot == l.slot) {
                out.push(ValidationIssue::new(Some(i), "duplicate-slot", format!("second {} layer", l.slot)));
            }
        }
        let at = |c| self.index_of(c);
        if let Some(d) = at(Category::Dress) {
            for other in [Category::Top, Category::Bottom] {
                if at(other).is_some() {
                    out.push(ValidationIssue::new(Some(d), "dress-conflict", format!("dress cannot be worn with a {other}")));
                }
            }
            if let Some(s) = at(Category::Shoes) {
                if s > d {
                    out.push(ValidationIssue::new(Some(s), "shoes-above-dress", "shoes must be layered below the dress".into()));
                }
            }
        }
        if let Some(o) = at(Category::Outerwear) {
            for inner in [Category::Top, Category::Dress] {
                if at(inner).is_some_and(|i| i > o) {
                    out.push(ValidationIssue::new(Some(o), "outerwear-below", format!("outerwear must be above the {inner}")));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            return Ok(());
        }
        let msg: Vec<String> = issues
            .iter()
            .map(|i| match i.layer {
                Some(l) => format!("layer {l}: {}", i.message),
                None => i.message.clone(),
            })
            .collect();
        Err(Error::Composition(msg.join("; ")))
    }

    /// Stable digest of the serialized outfit.
    pub fn digest(&self) -> String {
        crate::raster::sha256_hex(serde_json::to_string(self).expect("outfit serializes").as_bytes())
    }
}
