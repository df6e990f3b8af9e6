//! Noise schedule, control-initialization math, the control-conditioned
//! denoiser and its training loop.

mod denoiser;
mod schedule;
mod setup;
mod train;
mod zoom;

pub use denoiser::{Denoiser, DenoiserConfig, DenoiserInput, ENCODER_PREFIX};
pub use schedule::{
    build_schedule, control_init_latent, control_init_target, ddim_step, forward_noise, recover_z0, training_target,
    Branch, NoiseSchedule, ScheduleKind, TrainingPair,
};
pub use train::{
    build_examples, denoiser_loss, gaussian, joints_to_latent, prepare, prepare_control, train_denoiser,
    BranchHistogram, DataConfig, DiffusionModel, ModelCard, Prepared, ScheduleConfig, TimestepSampling, TrainConfig,
    TrainReport, Variant, CHECKPOINT_KIND,
};
pub use setup::{train_run, TrainSetup, REPORT_FILE};
pub use zoom::{zoom_augment, ZoomSample, MAX_SCALE, MIN_SCALE};
