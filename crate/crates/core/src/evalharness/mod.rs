//! Metrics, held-out evaluation and the ablation battery.

mod ablate;
mod evaluate;
mod landmarks;
mod metrics;

pub use ablate::{
    run_ablation, AblationConfig, AblationOptions, AblationReport, Comparison, RunSummary, COMPARED_METRICS,
};
pub use evaluate::{
    build_heldout, check_leakage, evaluate, evaluate_samples, score, zoom_window_for, HeldOutConfig, HeldOutSample,
    MetricReport, SampleMetrics, ZoomCase, CI_LEVEL,
};
pub use landmarks::{glyph_region, landmark_error, pattern_regions, stripe_region, LandmarkRegion, GLYPH_MARGIN};
pub use metrics::{bootstrap_mean, masked_mse, median, ncc, ssim, Interval};
