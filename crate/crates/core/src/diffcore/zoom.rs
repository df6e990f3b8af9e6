//! Shared crop/pad augmentation of control, target and joint rasters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{FloatImage, View};

pub const MIN_SCALE: f32 = 0.25;
pub const MAX_SCALE: f32 = 2.0;

/// Control image, target image and joint raster of one training example.
#[derive(Clone, Debug, PartialEq)]
pub struct ZoomSample {
    pub control: FloatImage,
    pub target: FloatImage,
    pub joints: FloatImage,
}

/// Applies one geometric transform to all three rasters.
///
/// `scale < 1` crops a `scale`-sized window at a seeded position and upsamples
/// it; `scale > 1` pads the frame (edge replicate) to `scale` times its size,
/// centred, and downsamples. Returns the view that was sampled, in source
/// pixel coordinates.
pub fn zoom_augment(sample: &ZoomSample, scale: f32, seed: u64) -> Result<(ZoomSample, View)> {
    if !(MIN_SCALE..=MAX_SCALE).contains(&scale) {
        return Err(Error::Config(format!("zoom scale {scale} outside [{MIN_SCALE}, {MAX_SCALE}]")));
    }
    let (h, w) = (sample.target.height, sample.target.width);
    for img in [&sample.control, &sample.joints] {
        if (img.height, img.width) != (h, w) {
            return Err(Error::Shape("zoom rasters must share one resolution".into()));
        }
    }
    let full = View::full(h, w);
    if scale == 1.0 {
        return Ok((sample.clone(), full));
    }
    let (vw, vh) = (w as f32 * scale, h as f32 * scale);
    let view = if scale < 1.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        View { x: rng.random_range(0.0..=w as f32 - vw), y: rng.random_range(0.0..=h as f32 - vh), w: vw, h: vh }
    } else {
        View { x: (w as f32 - vw) / 2.0, y: (h as f32 - vh) / 2.0, w: vw, h: vh }
    };
    let out = ZoomSample {
        control: sample.control.resample_view(view, h, w),
        target: sample.target.resample_view(view, h, w),
        joints: sample.joints.resample_view(view, h, w),
    };
    Ok((out, view))
}
