//! Warper `W`, layout `H`, reverse-warp network `U` and the incomplete-image
//! builders.

mod incomplete;
mod reverse_warp;
mod warp;

pub use incomplete::{
    fill_skin, make_incomplete_inference, make_simulated_incomplete, median_color, median_face_color, ControlImage,
    ControlKind, GarmentReverser, PerfectReverser,
};
pub use reverse_warp::{
    crop_pair, garment_pairs, masked_errors, paste_crop, train_reverse_warp, ReverseWarp, ReverseWarpConfig, WarpPair,
    CHECKPOINT_KIND,
};
pub use warp::{
    predict_layout, warp_garment, DisplacementField, Jitter, LayoutCorruption, LayoutPrediction, WarpedGarment,
};
