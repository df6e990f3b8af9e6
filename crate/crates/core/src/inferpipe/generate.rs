//! Control-initialized deterministic sampling, full frame and zoomed.

use std::path::Path;
use std::time::Instant;

use acdg_grad::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    control_init_latent, ddim_step, gaussian, prepare_control, DenoiserInput, DiffusionModel,
};
use crate::error::{Error, Result};
use crate::latentcore::{Autoencoder, LatentTensor};
use crate::raster::{FloatImage, View};
use crate::synthworld::Rect;

pub const DEFAULT_STEPS: usize = 20;
pub const AUTOENCODER_FILE: &str = "autoencoder.safetensors";
pub const DENOISER_FILE: &str = "denoiser.safetensors";

/// Autoencoder plus denoiser, loaded once and shared read-only.
pub struct ModelBundle {
    pub ae: Autoencoder,
    pub model: DiffusionModel,
}

impl ModelBundle {
    pub fn new(ae: Autoencoder, model: DiffusionModel) -> Result<Self> {
        let (lc, _, _) = ae.latent_dims();
        let d = &model.card.denoiser;
        if d.latent_channels != lc || d.embed_dim != ae.embedding_dim() {
            return Err(Error::Checkpoint(format!(
                "denoiser expects {} latent channels and a {}-d embedding; the autoencoder gives {lc} and {}",
                d.latent_channels,
                d.embed_dim,
                ae.embedding_dim()
            )));
        }
        Ok(Self { ae, model })
    }

    /// Loads `autoencoder.safetensors` and `denoiser.safetensors` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            if p.exists() {
                Ok(p)
            } else {
                Err(Error::Checkpoint(format!("{} not found", p.display())))
            }
        };
        Self::new(Autoencoder::load(&read(AUTOENCODER_FILE)?)?, DiffusionModel::load(&read(DENOISER_FILE)?)?)
    }

    pub fn height(&self) -> usize {
        self.ae.config.height
    }

    pub fn width(&self) -> usize {
        self.ae.config.width
    }
}

/// Crop rectangle in base-image pixels; its aspect ratio must equal the
/// base frame's.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZoomWindow {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl ZoomWindow {
    pub fn full(height: usize, width: usize) -> Self {
        Self { x: 0, y: 0, w: width as u32, h: height as u32 }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let (x, y, w, h) = (self.x as u64, self.y as u64, self.w as u64, self.h as u64);
        if w == 0 || h == 0 || x + w > width as u64 || y + h > height as u64 {
            return Err(Error::Config(format!("zoom window {self:?} is empty or leaves the {height}x{width} frame")));
        }
        if w * height as u64 != h * width as u64 {
            return Err(Error::Config(format!("zoom window {}x{} does not match the {height}x{width} aspect ratio", h, w)));
        }
        Ok(())
    }

    pub fn view(&self) -> View {
        View { x: self.x as f32, y: self.y as f32, w: self.w as f32, h: self.h as f32 }
    }
}

impl From<Rect> for ZoomWindow {
    fn from(r: Rect) -> Self {
        Self { x: r.x, y: r.y, w: r.w, h: r.h }
    }
}

impl std::str::FromStr for ZoomWindow {
    type Err = Error;

    /// `x,y,w,h`.
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<u32> = s
            .split(',')
            .map(|p| p.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("zoom window '{s}': {e}")))?;
        match v[..] {
            [x, y, w, h] => Ok(Self { x, y, w, h }),
            _ => Err(Error::Config(format!("zoom window '{s}' must be x,y,w,h"))),
        }
    }
}

/// One denoiser evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub t_next: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub encode_ms: f64,
    pub sample_ms: f64,
    pub decode_ms: f64,
}

#[derive(Clone, Debug)]
pub struct GenerationResult {
    pub image: FloatImage,
    pub trace: Vec<TraceStep>,
    /// Latent after each step, when requested.
    pub latents: Option<Vec<Tensor<f32>>>,
    pub timings: Timings,
}

impl GenerationResult {
    pub fn evaluations(&self) -> usize {
        self.trace.len()
    }
}

/// One sampling job: control image, joint raster, seed.
#[derive(Clone, Debug)]
pub struct Job {
    pub control: FloatImage,
    pub joints: FloatImage,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct SamplerOptions {
    pub steps: usize,
    pub keep_latents: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self { steps: DEFAULT_STEPS, keep_latents: false }
    }
}

/// Samples every job in one batch. Each job's starting noise comes from its
/// own seed.
pub fn generate_batch(bundle: &ModelBundle, jobs: &[Job], opts: SamplerOptions) -> Result<Vec<GenerationResult>> {
    if jobs.is_empty() {
        return Ok(Vec::new());
    }
    let m = &bundle.model;
    let sched = &m.schedule;
    let ts = sched.sampling_timesteps(opts.steps)?;
    let t0 = Instant::now();
    let (mut zc, mut emb, mut jt, mut z) = (vec![], vec![], vec![], vec![]);
    for job in jobs {
        let (c, e, j) = prepare_control(&bundle.ae, &job.control, &job.joints)?;
        let eps = gaussian(c.shape(), &mut ChaCha8Rng::seed_from_u64(job.seed));
        z.push(if m.card.variant.control_init() { control_init_latent(&c, ts[0], &eps, sched)? } else { eps });
        zc.push(c);
        emb.push(e);
        jt.push(j);
    }
    let encode_ms = t0.elapsed().as_secs_f64() * 1e3;
    let t1 = Instant::now();
    let mut input = DenoiserInput {
        noisy: Tensor::cat_batch(&z)?,
        joints: Tensor::cat_batch(&jt)?,
        control: Tensor::cat_batch(&zc)?,
        embed: Tensor::cat_batch(&emb)?,
        timesteps: vec![0; jobs.len()],
    };
    let mut trace = Vec::with_capacity(ts.len());
    let mut latents = opts.keep_latents.then(Vec::new);
    for (k, &t) in ts.iter().enumerate() {
        let t_next = ts.get(k + 1).copied().unwrap_or(0);
        input.timesteps.iter_mut().for_each(|v| *v = t);
        let eps_hat = m.predict(&input)?;
        let (next, _) = ddim_step(&input.noisy, &eps_hat, t, t_next, sched)?;
        input.noisy = next;
        trace.push(TraceStep { t, t_next });
        if let Some(l) = latents.as_mut() {
            l.push(input.noisy.clone());
        }
    }
    let sample_ms = t1.elapsed().as_secs_f64() * 1e3;
    let mut out = Vec::with_capacity(jobs.len());
    for i in 0..jobs.len() {
        let t2 = Instant::now();
        let image = bundle.ae.decode(&LatentTensor { values: input.noisy.batch_item(i)? })?;
        if !image.is_finite() {
            return Err(Error::Training(format!("generation {i} produced non-finite pixels")));
        }
        let decode_ms = t2.elapsed().as_secs_f64() * 1e3;
        out.push(GenerationResult {
            image,
            trace: trace.clone(),
            latents: latents.as_ref().map(|l| l.iter().map(|t| t.batch_item(i)).collect::<std::result::Result<Vec<_>, _>>()).transpose()?,
            timings: Timings { encode_ms, sample_ms, decode_ms },
        });
    }
    Ok(out)
}

/// Full-frame generation from a control image and joint raster.
pub fn generate_full(
    bundle: &ModelBundle,
    control: &FloatImage,
    joints: &FloatImage,
    seed: u64,
    opts: SamplerOptions,
) -> Result<GenerationResult> {
    let job = Job { control: control.clone(), joints: joints.clone(), seed };
    Ok(generate_batch(bundle, &[job], opts)?.remove(0))
}

/// Crops control and joints to `window`, upsamples both to the base
/// resolution and samples exactly as [`generate_full`].
pub fn zoom_job(control: &FloatImage, joints: &FloatImage, window: ZoomWindow, seed: u64) -> Result<Job> {
    let (h, w) = (control.height, control.width);
    window.validate(h, w)?;
    let v = window.view();
    Ok(Job { control: control.resample_view(v, h, w), joints: joints.resample_view(v, h, w), seed })
}

pub fn generate_zoom(
    bundle: &ModelBundle,
    control: &FloatImage,
    joints: &FloatImage,
    window: ZoomWindow,
    seed: u64,
    opts: SamplerOptions,
) -> Result<GenerationResult> {
    let job = zoom_job(control, joints, window, seed)?;
    Ok(generate_batch(bundle, &[job], opts)?.remove(0))
}
