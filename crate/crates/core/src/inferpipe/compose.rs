//! Outfit -> inference control image.

use crate::error::{Error, Result};
use crate::raster::FloatImage;
use crate::synthworld::{AvatarSample, OutfitComposition};
use crate::warpkit::{make_incomplete_inference, predict_layout, warp_garment, ControlImage, Jitter, LayoutCorruption};

/// Control image `m^i` plus the avatar's joint raster.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedControl {
    pub control: ControlImage,
    pub joints: FloatImage,
}

/// Warps every layer onto the avatar, pastes them in order inside the
/// predicted layout, and fills skin. `jitter` perturbs each warp with a
/// per-layer seed derived from `jitter.seed`.
pub fn compose_control(outfit: &OutfitComposition, avatar: &AvatarSample, jitter: Jitter) -> Result<ComposedControl> {
    outfit.validate()?;
    if outfit.avatar != avatar.seed {
        return Err(Error::Composition(format!("outfit is for avatar {}, not {}", outfit.avatar, avatar.seed)));
    }
    let warps = outfit
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let j = Jitter::new(jitter.amplitude, jitter.seed.wrapping_mul(31).wrapping_add(k as u64));
            warp_garment(&l.garment, avatar, l.slot, l.style, j)
        })
        .collect::<Result<Vec<_>>>()?;
    let layout = predict_layout(outfit, avatar, LayoutCorruption::None)?;
    let control = make_incomplete_inference(avatar, &warps, &layout, &outfit.digest())?;
    Ok(ComposedControl { control, joints: avatar.joints.clone() })
}
