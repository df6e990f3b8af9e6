//! Latent U-Net noise predictor with a ControlNet-style control branch.

use acdg_grad::nn::{Conv2d, GroupNorm, Linear};
use acdg_grad::{Element, Graph, Padding, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub joint_channels: usize,
    /// Channels at full latent resolution; doubled at each lower level.
    pub base_width: usize,
    /// Number of resolution levels.
    pub depth: usize,
    pub groups: usize,
    /// Self-attention at the lowest resolution.
    pub mid_attention: bool,
    pub heads: usize,
    /// Width of the conditioning vector fed in from the image embedder.
    pub embed_dim: usize,
    pub time_dim: usize,
    pub control_branch: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 4,
            joint_channels: 1,
            base_width: 32,
            depth: 2,
            groups: 8,
            mid_attention: true,
            heads: 2,
            embed_dim: 64,
            time_dim: 64,
            control_branch: true,
        }
    }
}

impl DenoiserConfig {
    pub fn input_channels(&self) -> usize {
        self.latent_channels + self.joint_channels
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 || self.latent_channels == 0 || self.time_dim < 2 {
            return Err(Error::Config("denoiser widths and depth must be positive".into()));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::Config("time_dim must be even".into()));
        }
        for k in 0..self.depth {
            if self.width(k) % self.groups.max(1) != 0 {
                return Err(Error::Config(format!("width {} not divisible by {} groups", self.width(k), self.groups)));
            }
        }
        if self.heads == 0 || self.width(self.depth - 1) % self.heads != 0 {
            return Err(Error::Config("attention heads must divide the lowest-level width".into()));
        }
        Ok(())
    }
}

/// One batch of denoiser inputs. Spatial tensors are `[b, c, h, w]` at
/// latent resolution; `h` and `w` must be divisible by `2^(depth-1)`.
#[derive(Clone, Debug)]
pub struct DenoiserInput<E: Element> {
    pub noisy: Tensor<E>,
    pub joints: Tensor<E>,
    pub control: Tensor<E>,
    pub embed: Tensor<E>,
    pub timesteps: Vec<usize>,
}

struct ResBlock {
    n1: GroupNorm,
    c1: Conv2d,
    temb: Linear,
    n2: GroupNorm,
    c2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new<E: Element>(s: &mut ParamStore<E>, name: &str, cin: usize, cout: usize, cfg: &DenoiserConfig, r: &mut ChaCha8Rng) -> Self {
        Self {
            n1: GroupNorm::new(s, &format!("{name}.n1"), cin, cfg.groups),
            c1: Conv2d::new(s, &format!("{name}.c1"), cin, cout, 3, 1, Padding::Zeros, r),
            temb: Linear::new(s, &format!("{name}.temb"), cfg.time_dim, cout, r),
            n2: GroupNorm::new(s, &format!("{name}.n2"), cout, cfg.groups),
            c2: Conv2d::new(s, &format!("{name}.c2"), cout, cout, 3, 1, Padding::Zeros, r),
            skip: (cin != cout).then(|| Conv2d::new(s, &format!("{name}.skip"), cin, cout, 1, 1, Padding::Zeros, r)),
        }
    }

    fn forward<E: Element>(&self, g: &mut Graph<E>, s: &ParamStore<E>, x: Var, temb: Var) -> Result<Var> {
        let mut h = self.n1.forward(g, s, x)?;
        h = g.silu(h);
        h = self.c1.forward(g, s, h)?;
        let t = self.temb.forward(g, s, temb)?;
        h = g.channel_bias(h, t)?;
        h = self.n2.forward(g, s, h)?;
        h = g.silu(h);
        h = self.c2.forward(g, s, h)?;
        let skip = match &self.skip {
            Some(c) => c.forward(g, s, x)?,
            None => x,
        };
        Ok(g.add(skip, h)?)
    }
}

/// `x + out(attention(q(x), k(c), v(c)))` over spatial tokens.
struct Attention {
    norm: GroupNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

impl Attention {
    fn new<E: Element>(s: &mut ParamStore<E>, name: &str, dq: usize, dc: usize, cfg: &DenoiserConfig, zero_out: bool, r: &mut ChaCha8Rng) -> Self {
        Self {
            norm: GroupNorm::new(s, &format!("{name}.norm"), dq, cfg.groups),
            q: Linear::no_bias(s, &format!("{name}.q"), dq, dq, r),
            k: Linear::no_bias(s, &format!("{name}.k"), dc, dq, r),
            v: Linear::no_bias(s, &format!("{name}.v"), dc, dq, r),
            out: if zero_out {
                Linear::zeroed(s, &format!("{name}.out"), dq, dq)
            } else {
                Linear::new(s, &format!("{name}.out"), dq, dq, r)
            },
        }
    }

    fn forward<E: Element>(&self, g: &mut Graph<E>, s: &ParamStore<E>, x: Var, context: Option<Var>, heads: usize) -> Result<Var> {
        let (_, _, h, w) = g.value(x).dims4()?;
        let xn = self.norm.forward(g, s, x)?;
        let xt = g.to_tokens(xn)?;
        let ct = match context {
            Some(c) => g.to_tokens(c)?,
            None => xt,
        };
        let q = self.q.forward(g, s, xt)?;
        let k = self.k.forward(g, s, ct)?;
        let v = self.v.forward(g, s, ct)?;
        let a = g.attention(q, k, v, heads)?;
        let o = self.out.forward(g, s, a)?;
        let o = g.from_tokens(o, h, w)?;
        Ok(g.add(x, o)?)
    }
}

/// Encoder half: input conv, one block per level, stride-2 convs between.
struct Encoder {
    inp: Conv2d,
    blocks: Vec<ResBlock>,
    downs: Vec<Conv2d>,
}

impl Encoder {
    fn new<E: Element>(s: &mut ParamStore<E>, prefix: &str, cfg: &DenoiserConfig, r: &mut ChaCha8Rng) -> Self {
        let inp = Conv2d::new(s, &format!("{prefix}.in"), cfg.input_channels(), cfg.width(0), 3, 1, Padding::Zeros, r);
        let mut blocks = Vec::new();
        let mut downs = Vec::new();
        for k in 0..cfg.depth {
            blocks.push(ResBlock::new(s, &format!("{prefix}.b{k}"), cfg.width(k), cfg.width(k), cfg, r));
            if k + 1 < cfg.depth {
                downs.push(Conv2d::new(s, &format!("{prefix}.down{k}"), cfg.width(k), cfg.width(k + 1), 3, 2, Padding::Zeros, r));
            }
        }
        Self { inp, blocks, downs }
    }

    /// Per-level features, finest first. `extra` is added after the input conv.
    fn forward<E: Element>(&self, g: &mut Graph<E>, s: &ParamStore<E>, x: Var, extra: Option<Var>, temb: Var) -> Result<Vec<Var>> {
        let mut h = self.inp.forward(g, s, x)?;
        if let Some(e) = extra {
            h = g.add(h, e)?;
        }
        let mut feats = Vec::with_capacity(self.blocks.len());
        for (k, b) in self.blocks.iter().enumerate() {
            h = b.forward(g, s, h, temb)?;
            feats.push(h);
            if let Some(d) = self.downs.get(k) {
                h = d.forward(g, s, h)?;
            }
        }
        Ok(feats)
    }
}

struct Control {
    encoder: Encoder,
    hint: Conv2d,
    zero: Vec<Conv2d>,
    cross: Attention,
}

pub struct Denoiser {
    pub config: DenoiserConfig,
    time1: Linear,
    time2: Linear,
    cond: Linear,
    encoder: Encoder,
    mid: ResBlock,
    mid_attn: Option<Attention>,
    control: Option<Control>,
    dec_blocks: Vec<ResBlock>,
    dec_ups: Vec<Conv2d>,
    out_norm: GroupNorm,
    out: Conv2d,
}

/// Prefix of the main encoder parameters (the part frozen after warm-up).
pub const ENCODER_PREFIX: &str = "enc.";

impl Denoiser {
    /// Builds the layer graph and a freshly initialized parameter store. The
    /// control encoder starts as an exact copy of the main encoder.
    pub fn build<E: Element>(config: DenoiserConfig, seed: u64) -> Result<(Self, ParamStore<E>)> {
        config.validate()?;
        let cfg = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1ff_0001);
        let r = &mut rng;
        let mut s = ParamStore::new();
        let time1 = Linear::new(&mut s, "time.l1", cfg.time_dim, cfg.time_dim, r);
        let time2 = Linear::new(&mut s, "time.l2", cfg.time_dim, cfg.time_dim, r);
        let cond = Linear::new(&mut s, "cond.proj", cfg.embed_dim, cfg.time_dim, r);
        let encoder = Encoder::new(&mut s, "enc", cfg, r);
        let low = cfg.width(cfg.depth - 1);
        let mid = ResBlock::new(&mut s, "mid.b", low, low, cfg, r);
        let mid_attn = cfg.mid_attention.then(|| Attention::new(&mut s, "mid.attn", low, low, cfg, false, r));
        let control = if cfg.control_branch {
            let encoder = Encoder::new(&mut s, "ctrl", cfg, r);
            let hint = Conv2d::new(&mut s, "ctrl.hint", cfg.latent_channels, cfg.width(0), 3, 1, Padding::Zeros, r);
            let zero = (0..cfg.depth).map(|k| Conv2d::zeroed(&mut s, &format!("ctrl.zero{k}"), cfg.width(k), cfg.width(k))).collect();
            let cross = Attention::new(&mut s, "ctrl.cross", low, low, cfg, true, r);
            Some(Control { encoder, hint, zero, cross })
        } else {
            None
        };
        let mut dec_blocks = Vec::new();
        let mut dec_ups = Vec::new();
        for k in 0..cfg.depth {
            dec_blocks.push(ResBlock::new(&mut s, &format!("dec.b{k}"), 2 * cfg.width(k), cfg.width(k), cfg, r));
            if k > 0 {
                dec_ups.push(Conv2d::new(&mut s, &format!("dec.up{k}"), cfg.width(k), cfg.width(k - 1), 3, 1, Padding::Zeros, r));
            }
        }
        let out_norm = GroupNorm::new(&mut s, "out.norm", cfg.width(0), cfg.groups);
        let out = Conv2d::new(&mut s, "out.conv", cfg.width(0), cfg.latent_channels, 3, 1, Padding::Zeros, r);
        if cfg.control_branch {
            let copies: Vec<(String, Tensor<E>)> = s
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(ENCODER_PREFIX).map(|rest| (format!("ctrl.{rest}"), t.clone())))
                .collect();
            for (name, t) in copies {
                let id = s.id(&name)?;
                *s.value_mut(id) = t;
            }
        }
        let net = Self { config, time1, time2, cond, encoder, mid, mid_attn, control, dec_blocks, dec_ups, out_norm, out };
        Ok((net, s))
    }

    fn check_input<E: Element>(&self, x: &DenoiserInput<E>) -> Result<(usize, usize, usize)> {
        let c = &self.config;
        let (b, lc, h, w) = x.noisy.dims4()?;
        let f = 1 << (c.depth - 1);
        let ok = lc == c.latent_channels
            && x.control.shape() == x.noisy.shape()
            && x.joints.shape() == [b, c.joint_channels, h, w]
            && x.embed.shape() == [b, c.embed_dim]
            && x.timesteps.len() == b
            && h % f == 0
            && w % f == 0;
        if !ok {
            return Err(Error::Shape(format!(
                "denoiser input noisy {:?} control {:?} joints {:?} embed {:?} timesteps {}",
                x.noisy.shape(),
                x.control.shape(),
                x.joints.shape(),
                x.embed.shape(),
                x.timesteps.len()
            )));
        }
        Ok((b, h, w))
    }

    /// Sinusoidal timestep features, `[b, time_dim]`.
    pub fn time_features<E: Element>(&self, timesteps: &[usize]) -> Tensor<E> {
        let d = self.config.time_dim;
        let half = d / 2;
        Tensor::from_fn([timesteps.len(), d], |i| {
            let (b, k) = (i / d, i % d);
            let freq = (-(10000f64.ln()) * (k % half) as f64 / half as f64).exp();
            let a = timesteps[b] as f64 * freq;
            E::from_f64_lossy(if k < half { a.sin() } else { a.cos() })
        })
    }

    /// Predicted noise, `[b, latent_channels, h, w]`.
    pub fn forward<E: Element>(&self, g: &mut Graph<E>, s: &ParamStore<E>, x: &DenoiserInput<E>) -> Result<Var> {
        self.check_input(x)?;
        let heads = self.config.heads;
        let tf = g.input(self.time_features(&x.timesteps));
        let mut temb = self.time1.forward(g, s, tf)?;
        temb = g.silu(temb);
        temb = self.time2.forward(g, s, temb)?;
        let e = g.input(x.embed.clone());
        let c = self.cond.forward(g, s, e)?;
        temb = g.add(temb, c)?;
        let temb = g.silu(temb);

        let zt = g.input(x.noisy.clone());
        let j = g.input(x.joints.clone());
        let inp = g.concat_channels(&[zt, j])?;
        let mut skips = self.encoder.forward(g, s, inp, None, temb)?;

        let mut ctrl_low = None;
        if let Some(ctl) = &self.control {
            let hint_in = g.input(x.control.clone());
            let hint = ctl.hint.forward(g, s, hint_in)?;
            let feats = ctl.encoder.forward(g, s, inp, Some(hint), temb)?;
            for (k, f) in feats.iter().enumerate() {
                let z = ctl.zero[k].forward(g, s, *f)?;
                skips[k] = g.add(skips[k], z)?;
            }
            ctrl_low = feats.last().copied();
        }

        let mut h = *skips.last().expect("depth >= 1");
        h = self.mid.forward(g, s, h, temb)?;
        if let Some(a) = &self.mid_attn {
            h = a.forward(g, s, h, None, heads)?;
        }
        if let (Some(ctl), Some(c)) = (&self.control, ctrl_low) {
            h = ctl.cross.forward(g, s, h, Some(c), heads)?;
        }
        for k in (0..self.config.depth).rev() {
            let cat = g.concat_channels(&[h, skips[k]])?;
            h = self.dec_blocks[k].forward(g, s, cat, temb)?;
            if k > 0 {
                h = g.upsample2x(h)?;
                h = self.dec_ups[k - 1].forward(g, s, h)?;
            }
        }
        h = self.out_norm.forward(g, s, h)?;
        h = g.silu(h);
        Ok(self.out.forward(g, s, h)?)
    }

    /// Inference-only forward returning the predicted noise tensor.
    pub fn predict<E: Element>(&self, s: &ParamStore<E>, x: &DenoiserInput<E>) -> Result<Tensor<E>> {
        let mut g = Graph::new();
        let y = self.forward(&mut g, s, x)?;
        Ok(g.value(y).clone())
    }
}
