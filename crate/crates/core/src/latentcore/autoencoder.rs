//! Deterministic convolutional autoencoder with downsample factor 4.

use std::collections::BTreeMap;
use std::path::Path;

use acdg_grad::nn::Conv2d;
use acdg_grad::{Adam, AdamConfig, Graph, Padding, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::raster::FloatImage;
use crate::training::{adam_step, LossCurve};

pub const CHECKPOINT_KIND: &str = "autoencoder";
pub const FACTOR: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub height: usize,
    pub width: usize,
    pub latent_channels: usize,
    pub widths: [usize; 3],
    pub steps: usize,
    pub batch: usize,
    /// Square training crop side; a multiple of 4.
    pub crop: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            height: 96,
            width: 64,
            latent_channels: 4,
            widths: [16, 32, 64],
            steps: 3000,
            batch: 8,
            crop: 32,
            lr: 2e-3,
            seed: 0,
        }
    }
}

/// `z = E(x)`: shape `[1, C, H/4, W/4]`, already multiplied by the latent scale.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    pub values: Tensor<f32>,
}

impl LatentTensor {
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.values.shape();
        (s[1], s[2], s[3])
    }

    pub fn is_finite(&self) -> bool {
        self.values.is_finite()
    }
}

/// SiLU then a convolution. No normalization: group statistics of a flat
/// image carry no colour, and flat colours must roundtrip.
struct PreAct {
    conv: Conv2d,
}

impl PreAct {
    fn new(s: &mut ParamStore<f32>, name: &str, cin: usize, cout: usize, stride: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { conv: Conv2d::new(s, name, cin, cout, kernel, stride, Padding::Replicate, rng) }
    }

    fn forward(&self, g: &mut Graph<f32>, s: &ParamStore<f32>, x: Var) -> Result<Var> {
        let h = g.silu(x);
        Ok(self.conv.forward(g, s, h)?)
    }

    /// `x + f(x)`.
    fn residual(&self, g: &mut Graph<f32>, s: &ParamStore<f32>, x: Var) -> Result<Var> {
        let h = self.forward(g, s, x)?;
        Ok(g.add(x, h)?)
    }
}

struct Encoder {
    inp: Conv2d,
    r1: PreAct,
    d1: PreAct,
    r2: PreAct,
    d2: PreAct,
    r3: PreAct,
    out: PreAct,
}

struct Decoder {
    inp: Conv2d,
    r3: PreAct,
    u2: PreAct,
    r2: PreAct,
    u1: PreAct,
    r1: PreAct,
    out: PreAct,
}

pub struct Autoencoder {
    pub config: AutoencoderConfig,
    pub store: ParamStore<f32>,
    enc: Encoder,
    dec: Decoder,
    scale: ParamId,
}

impl Autoencoder {
    pub fn new(config: AutoencoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x00ae_0001);
        let mut s = ParamStore::new();
        let [a, b, c] = config.widths;
        let l = config.latent_channels;
        let r = &mut rng;
        let enc = Encoder {
            inp: Conv2d::new(&mut s, "enc.in", 3, a, 3, 1, Padding::Replicate, r),
            r1: PreAct::new(&mut s, "enc.r1", a, a, 1, 3, r),
            d1: PreAct::new(&mut s, "enc.d1", a, b, 2, 3, r),
            r2: PreAct::new(&mut s, "enc.r2", b, b, 1, 3, r),
            d2: PreAct::new(&mut s, "enc.d2", b, c, 2, 3, r),
            r3: PreAct::new(&mut s, "enc.r3", c, c, 1, 3, r),
            out: PreAct::new(&mut s, "enc.out", c, l, 1, 1, r),
        };
        let dec = Decoder {
            inp: Conv2d::new(&mut s, "dec.in", l, c, 3, 1, Padding::Replicate, r),
            r3: PreAct::new(&mut s, "dec.r3", c, c, 1, 3, r),
            u2: PreAct::new(&mut s, "dec.u2", c, b, 1, 3, r),
            r2: PreAct::new(&mut s, "dec.r2", b, b, 1, 3, r),
            u1: PreAct::new(&mut s, "dec.u1", b, a, 1, 3, r),
            r1: PreAct::new(&mut s, "dec.r1", a, a, 1, 3, r),
            out: PreAct::new(&mut s, "dec.out", a, 3, 1, 3, r),
        };
        let scale = s.ones("latent_scale", &[1]);
        s.set_trainable_prefix("latent_scale", false);
        Self { config, store: s, enc, dec, scale }
    }

    pub fn latent_scale(&self) -> f32 {
        self.store.value(self.scale).data()[0]
    }

    /// Unscaled latent for a `[n, 3, h, w]` batch in `[-1, 1]`.
    fn encode_raw(&self, g: &mut Graph<f32>, x: Var) -> Result<Var> {
        Ok(self.encode_hidden(g, x)?.1)
    }

    /// `(last hidden features, unscaled latent)`.
    fn encode_hidden(&self, g: &mut Graph<f32>, x: Var) -> Result<(Var, Var)> {
        let (e, s) = (&self.enc, &self.store);
        let mut h = e.inp.forward(g, s, x)?;
        h = e.r1.residual(g, s, h)?;
        h = e.d1.forward(g, s, h)?;
        h = e.r2.residual(g, s, h)?;
        h = e.d2.forward(g, s, h)?;
        h = e.r3.residual(g, s, h)?;
        Ok((h, e.out.forward(g, s, h)?))
    }

    fn decode_raw(&self, g: &mut Graph<f32>, z: Var) -> Result<Var> {
        let (d, s) = (&self.dec, &self.store);
        let mut h = d.inp.forward(g, s, z)?;
        h = d.r3.residual(g, s, h)?;
        h = g.upsample2x(h)?;
        h = d.u2.forward(g, s, h)?;
        h = d.r2.residual(g, s, h)?;
        h = g.upsample2x(h)?;
        h = d.u1.forward(g, s, h)?;
        h = d.r1.residual(g, s, h)?;
        d.out.forward(g, s, h)
    }

    fn check_image(&self, x: &FloatImage) -> Result<()> {
        let c = &self.config;
        if x.channels != 3 || x.height != c.height || x.width != c.width {
            return Err(Error::Shape(format!(
                "autoencoder takes 3x{}x{} images, got {}x{}x{}",
                c.height, c.width, x.channels, x.height, x.width
            )));
        }
        Ok(())
    }

    pub fn latent_dims(&self) -> (usize, usize, usize) {
        (self.config.latent_channels, self.config.height / FACTOR, self.config.width / FACTOR)
    }

    pub fn encode(&self, x: &FloatImage) -> Result<LatentTensor> {
        self.check_image(x)?;
        let mut g = Graph::new();
        let xv = g.input(x.to_tensor());
        let z = self.encode_raw(&mut g, xv)?;
        let z = g.scale(z, self.latent_scale() as f64);
        Ok(LatentTensor { values: g.value(z).clone() })
    }

    /// Width of the vector returned by [`Autoencoder::encode_with_embedding`].
    pub fn embedding_dim(&self) -> usize {
        self.config.widths[2]
    }

    /// Latent plus a global descriptor: the spatial mean of the encoder's
    /// last hidden features.
    pub fn encode_with_embedding(&self, x: &FloatImage) -> Result<(LatentTensor, Vec<f32>)> {
        self.check_image(x)?;
        let mut g = Graph::new();
        let xv = g.input(x.to_tensor());
        let (h, z) = self.encode_hidden(&mut g, xv)?;
        let z = g.scale(z, self.latent_scale() as f64);
        let pooled = g.mean_spatial(h)?;
        Ok((LatentTensor { values: g.value(z).clone() }, g.value(pooled).data().to_vec()))
    }

    pub fn decode(&self, z: &LatentTensor) -> Result<FloatImage> {
        let (c, h, w) = self.latent_dims();
        if z.values.shape() != [1, c, h, w] {
            return Err(Error::Shape(format!("latent must be [1, {c}, {h}, {w}], got {:?}", z.values.shape())));
        }
        let mut g = Graph::new();
        let zv = g.input(z.values.clone());
        let zv = g.scale(zv, 1.0 / self.latent_scale() as f64);
        let y = self.decode_raw(&mut g, zv)?;
        let mut img = FloatImage::from_tensor(g.value(y))?;
        img.clamp_range();
        Ok(img)
    }

    pub fn roundtrip(&self, x: &FloatImage) -> Result<FloatImage> {
        self.decode(&self.encode(x)?)
    }

    pub fn save(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, &self.config, &self.store, extra)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (env, bytes) = checkpoint::read(path, CHECKPOINT_KIND)?;
        let mut ae = Self::new(env.config()?);
        checkpoint::load_weights(&mut ae.store, &bytes)?;
        Ok(ae)
    }
}

/// Random 4-aligned square crop of `img` as a `[1, 3, s, s]` tensor.
fn random_crop(img: &FloatImage, side: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let y = rng.random_range(0..=(img.height - side) / FACTOR) * FACTOR;
    let x = rng.random_range(0..=(img.width - side) / FACTOR) * FACTOR;
    img.crop(x, y, side, side).to_tensor()
}

/// Trains E and D on random crops of `images`, then sets the latent scale to
/// the inverse standard deviation of full-image latents.
pub fn train_autoencoder(images: &[FloatImage], config: &AutoencoderConfig) -> Result<(Autoencoder, LossCurve)> {
    if images.is_empty() {
        return Err(Error::Training("autoencoder dataset is empty".into()));
    }
    if config.crop % FACTOR != 0 || config.crop > config.height.min(config.width) {
        return Err(Error::Config(format!("crop {} must be a multiple of 4 within the image", config.crop)));
    }
    let mut ae = Autoencoder::new(config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x00ae_0002);
    let mut opt = Adam::new(AdamConfig { lr: config.lr, ..Default::default() });
    let mut curve = LossCurve::default();
    for step in 0..config.steps {
        // cosine decay to 2% of the base rate
        let t = step as f64 / config.steps.max(1) as f64;
        opt.config.lr = config.lr * (0.02 + 0.98 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()));
        let batch: Vec<Tensor<f32>> = (0..config.batch)
            .map(|_| random_crop(&images[rng.random_range(0..images.len())], config.crop, &mut rng))
            .collect();
        let x = Tensor::cat_batch(&batch)?;
        let mut g = Graph::new();
        let xv = g.input(x);
        let z = ae.encode_raw(&mut g, xv)?;
        let y = ae.decode_raw(&mut g, z)?;
        let l2 = g.mse(y, xv)?;
        let l1 = g.l1(y, xv)?;
        let l1 = g.scale(l1, 0.1);
        let loss = g.add(l2, l1)?;
        let (l, _) = adam_step(&g, loss, &mut ae.store, &mut opt, "autoencoder")?;
        curve.push(l);
    }
    // latent scale from up to 64 full images
    let (mut sum, mut sq, mut n) = (0.0f64, 0.0f64, 0usize);
    for img in images.iter().take(64) {
        if img.height != config.height || img.width != config.width {
            continue;
        }
        let mut g = Graph::new();
        let xv = g.input(img.to_tensor());
        let z = ae.encode_raw(&mut g, xv)?;
        for &v in g.value(z).data() {
            sum += v as f64;
            sq += (v as f64).powi(2);
            n += 1;
        }
    }
    if n > 0 {
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).max(1e-12).sqrt();
        ae.store.value_mut(ae.scale).data_mut()[0] = (1.0 / std) as f32;
    }
    Ok((ae, curve))
}
