//! Outfit composition, control-initialized sampling and the zoom path.

mod compose;
mod generate;

pub use compose::{compose_control, ComposedControl};
pub use generate::{
    generate_batch, generate_full, generate_zoom, zoom_job, GenerationResult, Job, ModelBundle, SamplerOptions,
    Timings, TraceStep, ZoomWindow, AUTOENCODER_FILE, DEFAULT_STEPS, DENOISER_FILE,
};
