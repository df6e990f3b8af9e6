//! Reverse-warp network U: on-body garment crop -> warp-style appearance.
//!
//! Runs per garment on the bounding box of its visible pixels, padded to a
//! multiple of 4. The head predicts a per-pixel gain in `[1, 1/0.72]` that
//! multiplies the input colour, so pattern detail passes through unblurred.
//! Trained with masked L1 plus a small patch-GAN term.

use std::collections::BTreeMap;
use std::path::Path;

use acdg_grad::nn::Conv2d;
use acdg_grad::{Adam, AdamConfig, Graph, Padding, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::warp::{warp_garment, Jitter};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::raster::{FloatImage, Mask};
use crate::synthworld::DressedSample;
use crate::training::{adam_step, LossCurve};

pub const CHECKPOINT_KIND: &str = "reverse-warp";

const GAIN_LO: f64 = 1.0;
const GAIN_HI: f64 = 1.0 / 0.72;
const GAIN_MID: f64 = (GAIN_LO + GAIN_HI) / 2.0;
const GAIN_HALF: f64 = (GAIN_HI - GAIN_LO) / 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseWarpConfig {
    pub width: usize,
    pub disc_width: usize,
    /// Weight of the adversarial term relative to L1.
    pub lambda_adv: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ReverseWarpConfig {
    fn default() -> Self {
        Self { width: 16, disc_width: 16, lambda_adv: 0.01, steps: 1500, batch: 8, lr: 2e-3, seed: 0 }
    }
}

/// One garment crop: shaded on-body input and its unshaded warp target.
#[derive(Clone, Debug)]
pub struct WarpPair {
    pub x0: i64,
    pub y0: i64,
    /// `[1, 4, h, w]`: masked RGB in `[-1, 1]` plus the mask.
    pub input: Tensor<f32>,
    /// `[1, 3, h, w]`: masked target in `[-1, 1]`.
    pub target: Tensor<f32>,
    /// `[1, 3, h, w]` mask replicated per channel.
    pub mask3: Tensor<f32>,
    pub mask: Mask,
}

fn pad4(lo: usize, hi: usize) -> (i64, usize) {
    let len = hi - lo;
    let padded = len.div_ceil(4) * 4;
    (lo as i64 - ((padded - len) / 2) as i64, padded)
}

/// Crop tensors for the pixels in `mask`; out-of-frame pixels are zero.
pub fn crop_pair(image: &FloatImage, target: Option<&FloatImage>, mask: &Mask) -> Option<WarpPair> {
    let (bx0, by0, bx1, by1) = mask.bbox()?;
    let (x0, w) = pad4(bx0, bx1);
    let (y0, h) = pad4(by0, by1);
    let n = h * w;
    let mut input = vec![0.0f32; 4 * n];
    let mut tgt = vec![0.0f32; 3 * n];
    let mut m3 = vec![0.0f32; 3 * n];
    let mut local = Mask::new(h, w);
    for i in 0..h {
        for j in 0..w {
            let (y, x) = (y0 + i as i64, x0 + j as i64);
            if y < 0 || x < 0 || y >= image.height as i64 || x >= image.width as i64 {
                continue;
            }
            let (y, x) = (y as usize, x as usize);
            if !mask.get(y, x) {
                continue;
            }
            local.set(i, j, true);
            let k = i * w + j;
            input[3 * n + k] = 1.0;
            for c in 0..3 {
                input[c * n + k] = image.get(c, y, x) / 127.5 - 1.0;
                m3[c * n + k] = 1.0;
                if let Some(t) = target {
                    tgt[c * n + k] = t.get(c, y, x) / 127.5 - 1.0;
                }
            }
        }
    }
    Some(WarpPair {
        x0,
        y0,
        input: Tensor::new([1, 4, h, w], input).ok()?,
        target: Tensor::new([1, 3, h, w], tgt).ok()?,
        mask3: Tensor::new([1, 3, h, w], m3).ok()?,
        mask: local,
    })
}

/// `(g^m, g^w)` crops for every visible garment of a dressed sample.
pub fn garment_pairs(sample: &DressedSample) -> Result<Vec<WarpPair>> {
    let avatar = &sample.avatar_ref;
    let mut out = Vec::new();
    for (k, layer) in sample.outfit.layers.iter().enumerate() {
        let mask = sample.layer_mask(k);
        if mask.is_empty() {
            continue;
        }
        let warp = warp_garment(&layer.garment, avatar, layer.slot, layer.style, Jitter::none())?;
        if let Some(p) = crop_pair(&sample.image, Some(&warp.image), &mask) {
            out.push(p);
        }
    }
    Ok(out)
}

struct Generator {
    c1: Conv2d,
    c2: Conv2d,
    down: Conv2d,
    mid: Conv2d,
    up: Conv2d,
    out: Conv2d,
}

struct Discriminator {
    c1: Conv2d,
    c2: Conv2d,
    out: Conv2d,
}

pub struct ReverseWarp {
    pub config: ReverseWarpConfig,
    pub store: ParamStore<f32>,
    gen: Generator,
}

impl ReverseWarp {
    pub fn new(config: ReverseWarpConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0055_0001);
        let mut store = ParamStore::new();
        let w = config.width;
        let z = Padding::Zeros;
        let gen = Generator {
            c1: Conv2d::new(&mut store, "u.c1", 4, w, 3, 1, z, &mut rng),
            c2: Conv2d::new(&mut store, "u.c2", w, w, 3, 1, z, &mut rng),
            down: Conv2d::new(&mut store, "u.down", w, 2 * w, 3, 2, z, &mut rng),
            mid: Conv2d::new(&mut store, "u.mid", 2 * w, 2 * w, 3, 1, z, &mut rng),
            up: Conv2d::new(&mut store, "u.up", 3 * w, w, 3, 1, z, &mut rng),
            out: Conv2d::new(&mut store, "u.out", w + 4, 1, 3, 1, z, &mut rng),
        };
        Self { config, store, gen }
    }

    fn forward(&self, g: &mut Graph<f32>, input: &Tensor<f32>) -> Result<Var> {
        let x = g.input(input.clone());
        let n = &self.gen;
        let s = &self.store;
        let h = n.c1.forward(g, s, x)?;
        let h = g.silu(h);
        let h = n.c2.forward(g, s, h)?;
        let skip = g.silu(h);
        let d = n.down.forward(g, s, skip)?;
        let d = g.silu(d);
        let d = n.mid.forward(g, s, d)?;
        let d = g.silu(d);
        let u = g.upsample2x(d)?;
        let cat = g.concat_channels(&[u, skip])?;
        let u = n.up.forward(g, s, cat)?;
        let u = g.silu(u);
        let cat = g.concat_channels(&[u, x])?;
        let o = n.out.forward(g, s, cat)?;
        let t = g.tanh(o);
        // gain = GAIN_MID + GAIN_HALF * tanh, applied to colour in [0, 2]
        let gain = g.scale(t, GAIN_HALF);
        let mid = g.input(Tensor::full(g.shape(gain).to_vec(), GAIN_MID as f32));
        let gain = g.add(gain, mid)?;
        let gain = g.concat_channels(&[gain, gain, gain])?;
        let (_, _, h, w) = input.dims4()?;
        let pos: Vec<f32> = input.data()[..3 * h * w].iter().map(|v| v + 1.0).collect();
        let pos = g.input(Tensor::new([1, 3, h, w], pos)?);
        let y = g.mul(pos, gain)?;
        let one = g.input(Tensor::full([1, 3, h, w], 1.0));
        Ok(g.sub(y, one)?)
    }

    /// Output crop, shape `[1, 3, h, w]`; may overshoot `1` slightly before
    /// pasting clamps it.
    pub fn run(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let y = self.forward(&mut g, input)?;
        Ok(g.value(y).clone())
    }

    /// Replaces every visible garment of `sample` with U's output, in place.
    pub fn reverse_warp_image(&self, sample: &DressedSample) -> Result<FloatImage> {
        let mut out = sample.image.clone();
        for k in 0..sample.outfit.layers.len() {
            let mask = sample.layer_mask(k);
            let Some(pair) = crop_pair(&sample.image, None, &mask) else { continue };
            let y = self.run(&pair.input)?;
            paste_crop(&mut out, &pair, &y);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, &self.config, &self.store, extra)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (env, bytes) = checkpoint::read(path, CHECKPOINT_KIND)?;
        let mut net = Self::new(env.config()?);
        checkpoint::load_weights(&mut net.store, &bytes)?;
        Ok(net)
    }
}

/// Writes masked crop output back into the full image.
pub fn paste_crop(out: &mut FloatImage, pair: &WarpPair, y: &Tensor<f32>) {
    let (h, w) = (pair.mask.height, pair.mask.width);
    let n = h * w;
    for i in 0..h {
        for j in 0..w {
            if !pair.mask.get(i, j) {
                continue;
            }
            let (yy, xx) = ((pair.y0 + i as i64) as usize, (pair.x0 + j as i64) as usize);
            for c in 0..3 {
                out.set(c, yy, xx, ((y.data()[c * n + i * w + j] + 1.0) * 127.5).clamp(0.0, 255.0));
            }
        }
    }
}

impl Discriminator {
    fn new(store: &mut ParamStore<f32>, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let z = Padding::Zeros;
        Self {
            c1: Conv2d::new(store, "d.c1", 4, width, 3, 2, z, rng),
            c2: Conv2d::new(store, "d.c2", width, 2 * width, 3, 2, z, rng),
            out: Conv2d::new(store, "d.out", 2 * width, 1, 3, 1, z, rng),
        }
    }

    fn forward(&self, g: &mut Graph<f32>, s: &ParamStore<f32>, rgb: Var, mask: Var) -> Result<Var> {
        let x = g.concat_channels(&[rgb, mask])?;
        let h = self.c1.forward(g, s, x)?;
        let h = g.leaky_relu(h, 0.2);
        let h = self.c2.forward(g, s, h)?;
        let h = g.leaky_relu(h, 0.2);
        Ok(self.out.forward(g, s, h)?)
    }
}

fn mask_channel(p: &WarpPair) -> Tensor<f32> {
    let (_, _, h, w) = p.input.dims4().expect("4-d");
    Tensor::new([1, 1, h, w], p.input.data()[3 * h * w..].to_vec()).expect("dims")
}

/// Trains U on `(g^m, g^w)` crops.
pub fn train_reverse_warp(pairs: &[WarpPair], config: &ReverseWarpConfig) -> Result<(ReverseWarp, LossCurve)> {
    if pairs.is_empty() {
        return Err(Error::Training("reverse-warp dataset is empty".into()));
    }
    let mut net = ReverseWarp::new(config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0055_0002);
    let mut dstore = ParamStore::new();
    let disc = Discriminator::new(&mut dstore, config.disc_width, &mut rng);
    let adam = AdamConfig { lr: config.lr, ..Default::default() };
    let mut opt_g = Adam::new(adam);
    let mut opt_d = Adam::new(adam);
    let mut curve = LossCurve::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let adv = config.lambda_adv > 0.0;
    for _ in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch);
        while batch.len() < config.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&pairs[order[cursor]]);
            cursor += 1;
        }
        // generator step, discriminator frozen
        dstore.set_trainable_prefix("", false);
        let mut g = Graph::new();
        let mut terms = Vec::new();
        let mut fakes = Vec::new();
        for p in &batch {
            let y = net.forward(&mut g, &p.input)?;
            let m3 = g.input(p.mask3.clone());
            let ym = g.mul(y, m3)?;
            let t = g.input(p.target.clone());
            let mut l = g.l1(ym, t)?;
            if adv {
                let m1 = g.input(mask_channel(p));
                let logits = disc.forward(&mut g, &dstore, ym, m1)?;
                let a = g.bce_logits(logits, 1.0);
                let a = g.scale(a, config.lambda_adv);
                l = g.add(l, a)?;
            }
            terms.push(l);
            fakes.push(ym);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t)?;
        }
        let total = g.scale(total, 1.0 / batch.len() as f64);
        let (loss, _) = adam_step(&g, total, &mut net.store, &mut opt_g, "reverse-warp generator")?;
        curve.push(loss);
        if adv {
            dstore.set_trainable_prefix("", true);
            let mut gd = Graph::new();
            let mut dl = Vec::new();
            for (p, &f) in batch.iter().zip(&fakes) {
                let m1 = gd.input(mask_channel(p));
                let fake = gd.input(g.value(f).clone());
                let real = gd.input(p.target.clone());
                let lf = disc.forward(&mut gd, &dstore, fake, m1)?;
                let lr = disc.forward(&mut gd, &dstore, real, m1)?;
                let a = gd.bce_logits(lf, 0.0);
                let b = gd.bce_logits(lr, 1.0);
                dl.push(gd.add(a, b)?);
            }
            let mut total = dl[0];
            for &t in &dl[1..] {
                total = gd.add(total, t)?;
            }
            let total = gd.scale(total, 0.5 / batch.len() as f64);
            adam_step(&gd, total, &mut dstore, &mut opt_d, "reverse-warp discriminator")?;
        }
        let _ = rng.random::<u32>();
    }
    Ok((net, curve))
}

/// Masked MSE (in `[0, 255]` units squared) of U's output and of the
/// identity map against the targets.
pub fn masked_errors(net: &ReverseWarp, pairs: &[WarpPair]) -> Result<(f64, f64)> {
    let (mut eu, mut ei, mut n) = (0.0f64, 0.0f64, 0usize);
    for p in pairs {
        let y = net.run(&p.input)?;
        for (idx, &m) in p.mask3.data().iter().enumerate() {
            if m > 0.0 {
                let t = p.target.data()[idx] as f64;
                let x = p.input.data()[idx] as f64;
                eu += ((y.data()[idx] as f64 - t) * 127.5).powi(2);
                ei += ((x - t) * 127.5).powi(2);
                n += 1;
            }
        }
    }
    Ok((eu / n.max(1) as f64, ei / n.max(1) as f64))
}
