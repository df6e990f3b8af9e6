//! Training data, variants and the denoiser training loop.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use acdg_grad::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::{Denoiser, DenoiserConfig, DenoiserInput, ENCODER_PREFIX};
use super::schedule::{build_schedule, training_target, Branch, NoiseSchedule, ScheduleKind};
use super::zoom::{zoom_augment, ZoomSample, MAX_SCALE, MIN_SCALE};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::inferpipe::compose_control;
use crate::latentcore::{Autoencoder, FACTOR};
use crate::synthworld::{gen_avatar, glyph_outfit, random_outfit, render_dressed, WorldConfig};
use crate::training::{adam_step, LossCurve};
use crate::warpkit::{make_simulated_incomplete, GarmentReverser, Jitter};

pub const CHECKPOINT_KIND: &str = "denoiser";

/// Ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Control-initialized targets and inference, simulated controls, zoom augmentation.
    Acdg,
    /// Standard targets everywhere; sampling starts from pure noise.
    NoiseInit,
    /// Trained on jittered inference controls instead of simulated ones.
    WarpControl,
    /// No zoom augmentation.
    NoZoom,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Acdg, Variant::NoiseInit, Variant::WarpControl, Variant::NoZoom];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Acdg => "acdg",
            Variant::NoiseInit => "noise-init",
            Variant::WarpControl => "warp-control",
            Variant::NoZoom => "no-zoom",
        }
    }

    pub fn control_init(self) -> bool {
        self != Variant::NoiseInit
    }

    pub fn warp_control(self) -> bool {
        self == Variant::WarpControl
    }

    pub fn zoom(self) -> bool {
        self != Variant::NoZoom
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}' (expected acdg, noise-init, warp-control or no-zoom)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub horizon: usize,
    pub skip: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { kind: ScheduleKind::ScaledLinear, horizon: 1000, skip: 50 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.horizon, self.skip, self.kind)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimestepSampling {
    #[default]
    Uniform,
    /// `t = k mod T` for the k-th sample drawn; one pass over `0..T` per
    /// `T` samples.
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Main-encoder weights stop updating from this step on.
    pub freeze_encoder_after: Option<usize>,
    pub zoom_probability: f64,
    /// Zoomed copies of each example encoded up front; 0 zooms on the fly.
    pub zoom_pool: usize,
    pub ema_decay: Option<f64>,
    pub timesteps: TimestepSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch: 8,
            lr: 1e-3,
            seed: 0,
            freeze_encoder_after: Some(2000),
            zoom_probability: 0.5,
            zoom_pool: 4,
            ema_decay: Some(0.998),
            timesteps: TimestepSampling::Uniform,
        }
    }
}

/// Procedural training set: avatar seeds `start..start + count`; every
/// `glyph_every`-th seed wears the glyph outfit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub start_seed: u64,
    pub count: usize,
    pub glyph_every: u64,
    /// Warp jitter of the controls used by the warp-control variant.
    pub warp_jitter: f32,
    pub height: usize,
    pub width: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { start_seed: 0, count: 400, glyph_every: 2, warp_jitter: 3.0, height: 96, width: 64 }
    }
}

impl DataConfig {
    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.start_seed..self.start_seed + self.count as u64
    }

    pub fn world(&self) -> Result<WorldConfig> {
        WorldConfig::new(self.height, self.width)
    }
}

/// Everything needed to rebuild and interpret a trained denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub variant: Variant,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl ModelCard {
    pub fn new(variant: Variant) -> Self {
        let mut train = TrainConfig::default();
        if !variant.zoom() {
            train.zoom_probability = 0.0;
        }
        Self { variant, schedule: Default::default(), denoiser: Default::default(), train, data: Default::default() }
    }

    /// The schedule used for training targets: the control-initialized
    /// region is empty for variants without it.
    pub fn target_schedule(&self) -> Result<NoiseSchedule> {
        let mut s = self.schedule.build()?;
        if !self.variant.control_init() {
            s.skip = 0;
        }
        Ok(s)
    }
}

/// Control, target and joints for each training seed. The control is the
/// simulated incomplete image, or a jittered inference control for the
/// warp-control variant.
pub fn build_examples(data: &DataConfig, variant: Variant, reverser: &dyn GarmentReverser) -> Result<Vec<ZoomSample>> {
    let world = data.world()?;
    data.seeds()
        .map(|s| {
            let avatar = gen_avatar(s, &world)?;
            let outfit = if data.glyph_every > 0 && s % data.glyph_every == 0 { glyph_outfit(s)? } else { random_outfit(s)? };
            let dressed = render_dressed(&avatar, &outfit)?;
            let control = if variant.warp_control() {
                compose_control(&outfit, &avatar, Jitter::new(data.warp_jitter, s))?.control.image
            } else {
                make_simulated_incomplete(&dressed, reverser)?.image
            };
            Ok(ZoomSample { control, target: dressed.image, joints: avatar.joints.clone() })
        })
        .collect()
}

/// Latent-space view of one example.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub z0: Tensor<f32>,
    pub z_ctrl: Tensor<f32>,
    pub embed: Tensor<f32>,
    pub joints: Tensor<f32>,
}

/// Joint raster area-averaged to latent resolution, as `[1, 1, h/4, w/4]`
/// in `[-1, 1]`.
pub fn joints_to_latent(joints: &crate::raster::FloatImage) -> Result<Tensor<f32>> {
    Ok(joints.downsample_area(FACTOR)?.to_tensor())
}

/// Control latent, conditioning embedding and joints for a control image.
pub fn prepare_control(
    ae: &Autoencoder,
    control: &crate::raster::FloatImage,
    joints: &crate::raster::FloatImage,
) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
    let (z, e) = ae.encode_with_embedding(control)?;
    let n = e.len();
    Ok((z.values, Tensor::new([1, n], e)?, joints_to_latent(joints)?))
}

pub fn prepare(ae: &Autoencoder, sample: &ZoomSample) -> Result<Prepared> {
    let (z_ctrl, embed, joints) = prepare_control(ae, &sample.control, &sample.joints)?;
    let z0 = ae.encode(&sample.target)?.values;
    Ok(Prepared { z0, z_ctrl, embed, joints })
}

pub fn gaussian(shape: &[usize], rng: &mut impl Rng) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |_| rng.sample::<f32, _>(StandardNormal))
}

/// Per-timestep counts of each training branch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchHistogram {
    pub standard: Vec<u64>,
    pub control_init: Vec<u64>,
}

impl BranchHistogram {
    pub fn new(horizon: usize) -> Self {
        Self { standard: vec![0; horizon], control_init: vec![0; horizon] }
    }

    pub fn record(&mut self, t: usize, b: Branch) {
        match b {
            Branch::Standard => self.standard[t] += 1,
            Branch::ControlInit => self.control_init[t] += 1,
        }
    }

    /// Timesteps that took the control-initialized branch at least once.
    pub fn control_timesteps(&self) -> Vec<usize> {
        (0..self.control_init.len()).filter(|&t| self.control_init[t] > 0).collect()
    }

    /// Timesteps that took both branches.
    pub fn mixed_timesteps(&self) -> Vec<usize> {
        (0..self.standard.len()).filter(|&t| self.standard[t] > 0 && self.control_init[t] > 0).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: LossCurve,
    pub branches: BranchHistogram,
    pub zoomed_samples: u64,
    pub encoder_frozen_at: Option<usize>,
    pub seconds: f64,
}

/// One assembled batch.
pub struct Batch {
    pub input: DenoiserInput<f32>,
    pub target: Tensor<f32>,
    pub branches: Vec<Branch>,
}

/// Draws a batch: example, optional zoom, timestep, noise and piecewise
/// target per item.
#[allow(clippy::too_many_arguments)]
fn draw_batch(
    examples: &[ZoomSample],
    cache: &[Prepared],
    pool: &[Vec<Prepared>],
    ae: &Autoencoder,
    card: &ModelCard,
    sched: &NoiseSchedule,
    drawn: &mut u64,
    zoomed: &mut u64,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    let tc = &card.train;
    let (mut noisy, mut target, mut control, mut joints, mut embed, mut ts, mut branches) =
        (vec![], vec![], vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..tc.batch {
        let idx = rng.random_range(0..examples.len());
        let zoom = tc.zoom_probability > 0.0 && rng.random_bool(tc.zoom_probability.min(1.0));
        let p = if zoom {
            *zoomed += 1;
            match pool.get(idx).filter(|v| !v.is_empty()) {
                Some(v) => v[rng.random_range(0..v.len())].clone(),
                None => {
                    let scale = rng.random_range(MIN_SCALE..=MAX_SCALE);
                    let (aug, _) = zoom_augment(&examples[idx], scale, rng.random())?;
                    prepare(ae, &aug)?
                }
            }
        } else {
            cache[idx].clone()
        };
        let t = match tc.timesteps {
            TimestepSampling::Uniform => rng.random_range(0..sched.horizon),
            TimestepSampling::Sweep => (*drawn % sched.horizon as u64) as usize,
        };
        *drawn += 1;
        let eps = gaussian(p.z0.shape(), rng);
        let pair = training_target(&p.z0, &p.z_ctrl, t, &eps, sched)?;
        noisy.push(pair.noisy);
        target.push(pair.target);
        control.push(p.z_ctrl);
        joints.push(p.joints);
        embed.push(p.embed);
        ts.push(t);
        branches.push(pair.branch);
    }
    Ok(Batch {
        input: DenoiserInput {
            noisy: Tensor::cat_batch(&noisy)?,
            joints: Tensor::cat_batch(&joints)?,
            control: Tensor::cat_batch(&control)?,
            embed: Tensor::cat_batch(&embed)?,
            timesteps: ts,
        },
        target: Tensor::cat_batch(&target)?,
        branches,
    })
}

fn zoom_pool(examples: &[ZoomSample], ae: &Autoencoder, tc: &TrainConfig) -> Result<Vec<Vec<Prepared>>> {
    if tc.zoom_probability <= 0.0 || tc.zoom_pool == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x200d_0003);
    examples
        .iter()
        .map(|e| {
            (0..tc.zoom_pool)
                .map(|_| {
                    let scale = rng.random_range(MIN_SCALE..=MAX_SCALE);
                    prepare(ae, &zoom_augment(e, scale, rng.random())?.0)
                })
                .collect()
        })
        .collect()
}

/// MSE between predicted noise and `target`.
pub fn denoiser_loss<E: acdg_grad::Element>(
    g: &mut Graph<E>,
    net: &Denoiser,
    store: &ParamStore<E>,
    input: &DenoiserInput<E>,
    target: &Tensor<E>,
) -> Result<Var> {
    let y = net.forward(g, store, input)?;
    let t = g.input(target.clone());
    Ok(g.mse(y, t)?)
}

/// Trained noise predictor with its schedule.
pub struct DiffusionModel {
    pub card: ModelCard,
    pub net: Denoiser,
    pub store: ParamStore<f32>,
    pub schedule: NoiseSchedule,
}

impl DiffusionModel {
    pub fn new(card: ModelCard) -> Result<Self> {
        let (net, store) = Denoiser::build(card.denoiser.clone(), card.train.seed)?;
        let schedule = card.schedule.build()?;
        Ok(Self { card, net, store, schedule })
    }

    pub fn save(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, &self.card, &self.store, extra)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (env, bytes) = checkpoint::read(path, CHECKPOINT_KIND)?;
        let mut m = Self::new(env.config()?)?;
        checkpoint::load_weights(&mut m.store, &bytes)?;
        Ok(m)
    }

    pub fn predict(&self, input: &DenoiserInput<f32>) -> Result<Tensor<f32>> {
        self.net.predict(&self.store, input)
    }
}

/// `e <- v + decay (e - v)`; leaves `e` bit-equal to `v` once they agree,
/// so frozen weights stay frozen in the average too.
fn ema_update(ema: &mut ParamStore<f32>, live: &ParamStore<f32>, decay: f32) {
    for id in live.ids() {
        let src = live.value(id).data();
        for (e, &v) in ema.value_mut(id).data_mut().iter_mut().zip(src) {
            *e = v + decay * (*e - v);
        }
    }
}

/// Trains the denoiser of `card` on `examples` through the autoencoder `ae`.
///
/// With an EMA decay set, the returned weights are the running average.
pub fn train_denoiser(examples: &[ZoomSample], ae: &Autoencoder, card: &ModelCard) -> Result<(DiffusionModel, TrainReport)> {
    if examples.is_empty() {
        return Err(Error::Training("denoiser dataset is empty".into()));
    }
    let (lc, _, _) = ae.latent_dims();
    if card.denoiser.latent_channels != lc || card.denoiser.embed_dim != ae.embedding_dim() {
        return Err(Error::Shape(format!(
            "denoiser expects {} latent channels and a {}-d embedding; the autoencoder gives {lc} and {}",
            card.denoiser.latent_channels,
            card.denoiser.embed_dim,
            ae.embedding_dim()
        )));
    }
    let tc = &card.train;
    if tc.batch == 0 {
        return Err(Error::Config("batch must be positive".into()));
    }
    let started = Instant::now();
    let sched = card.target_schedule()?;
    let cache = examples.iter().map(|e| prepare(ae, e)).collect::<Result<Vec<_>>>()?;
    let mut model = DiffusionModel::new(card.clone())?;
    let mut ema = tc.ema_decay.map(|_| model.store.clone());
    let mut opt = Adam::new(AdamConfig { lr: tc.lr, clip_norm: Some(1.0), ..Default::default() });
    let pool = zoom_pool(examples, ae, tc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0xd1ff_0002);
    let mut report = TrainReport { branches: BranchHistogram::new(sched.horizon), ..Default::default() };
    let mut drawn = 0u64;
    for step in 0..tc.steps {
        if tc.freeze_encoder_after == Some(step) {
            model.store.set_trainable_prefix(ENCODER_PREFIX, false);
            report.encoder_frozen_at = Some(step);
            tracing::info!(step, "main encoder frozen");
        }
        // short linear warm-up, then cosine decay to 10%
        let warm = (step as f64 + 1.0) / 100.0;
        let t = step as f64 / tc.steps.max(1) as f64;
        opt.config.lr = tc.lr * warm.min(1.0) * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()));
        let batch = draw_batch(examples, &cache, &pool, ae, card, &sched, &mut drawn, &mut report.zoomed_samples, &mut rng)?;
        for (&t, &b) in batch.input.timesteps.iter().zip(&batch.branches) {
            report.branches.record(t, b);
        }
        let mut g = Graph::new();
        let loss = denoiser_loss(&mut g, &model.net, &model.store, &batch.input, &batch.target)?;
        let (l, _) = adam_step(&g, loss, &mut model.store, &mut opt, "denoiser")?;
        report.losses.push(l);
        if let (Some(e), Some(d)) = (ema.as_mut(), tc.ema_decay) {
            let d = d.min((1.0 + step as f64) / (10.0 + step as f64));
            ema_update(e, &model.store, d as f32);
        }
        if step % 250 == 0 || step + 1 == tc.steps {
            tracing::info!(step, loss = l, variant = %card.variant, "denoiser");
        }
    }
    if let Some(e) = ema {
        model.store = e;
    }
    report.seconds = started.elapsed().as_secs_f64();
    Ok((model, report))
}
