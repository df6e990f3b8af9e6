//! Procedural avatars, garments and dressed ground truth.

mod avatar;
mod dataset;
mod garment;
mod geometry;
pub mod glyph;
mod outfit;
mod render;

use serde::{Deserialize, Serialize};

pub use avatar::{gen_avatar, AvatarSample, Pose};
pub use dataset::{
    generate_dataset, glyph_outfit, random_outfit, Manifest, ManifestHeader, SampleFiles, SampleRecord, MANIFEST_FILE,
};
pub use garment::{
    contrast_pair, gen_garment, glyph_layout, light_dark_pair, locate, place_parts, random_glyph_text, random_pattern,
    Category, CharBox, Fit, GarmentAsset, GarmentSpec, PatternFamily, PatternSpec, PlacedPart, OPEN_GAP,
};
pub use geometry::{segment_distance, Capsule, Ellipse, Ribbon, Vec2};
pub use outfit::{Layer, OutfitComposition, Rect, StyleFlags, ValidationIssue};
pub use render::{render_dressed, render_view, DressedSample, Scene, ShadeField, UvHit, Worn};

use crate::error::{Error, Result};

/// Parsing labels shared by every raster in the world.
pub mod labels {
    pub const BACKGROUND: u8 = 0;
    pub const SKIN: u8 = 1;
    pub const FACE: u8 = 2;
    pub const HAIR: u8 = 3;
    pub const TOP: u8 = 4;
    pub const BOTTOM: u8 = 5;
    pub const OUTERWEAR: u8 = 6;
    pub const DRESS: u8 = 7;
    pub const SHOES: u8 = 8;
    pub const ARMS: u8 = 9;
    pub const LEGS: u8 = 10;

    pub const LEGEND: [(u8, &str); 11] = [
        (BACKGROUND, "background"),
        (SKIN, "skin"),
        (FACE, "face"),
        (HAIR, "hair"),
        (TOP, "top"),
        (BOTTOM, "bottom"),
        (OUTERWEAR, "outerwear"),
        (DRESS, "dress"),
        (SHOES, "shoes"),
        (ARMS, "arms"),
        (LEGS, "legs"),
    ];

    pub fn is_garment(label: u8) -> bool {
        (TOP..=SHOES).contains(&label)
    }

    /// Exposed skin that receives the constant fill.
    pub fn is_skin(label: u8) -> bool {
        matches!(label, SKIN | ARMS | LEGS)
    }

    pub fn is_known(label: u8) -> bool {
        label <= LEGS
    }
}

pub const MIN_HEIGHT: usize = 64;
pub const MIN_WIDTH: usize = 48;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldConfig {
    pub height: usize,
    pub width: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { height: 96, width: 64 }
    }
}

impl WorldConfig {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        let c = Self { height, width };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_HEIGHT || self.width < MIN_WIDTH {
            return Err(Error::Config(format!(
                "resolution {}x{} below minimum {MIN_HEIGHT}x{MIN_WIDTH}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Parses `HxW`, e.g. `96x64`.
    pub fn parse(s: &str) -> Result<Self> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("resolution '{s}' is not HxW")))?;
        let num = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad resolution '{s}'")));
        Self::new(num(h)?, num(w)?)
    }
}
