//! Noise schedule and the control-initialization algebra.

use acdg_grad::{Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Betas linear in `[1e-4, 0.02]`.
    Linear,
    /// Betas whose square roots are linear in `[sqrt(0.00085), sqrt(0.012)]`.
    ScaledLinear,
}

/// `alphas_bar[t]` for `t` in `0..=T`, with `alphas_bar[0] = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub horizon: usize,
    pub skip: usize,
    pub alphas_bar: Vec<f64>,
}

pub fn build_schedule(horizon: usize, skip: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if horizon < 1 {
        return Err(Error::Config("schedule horizon must be at least 1".into()));
    }
    if skip > horizon {
        return Err(Error::Config(format!("skip {skip} exceeds horizon {horizon}")));
    }
    let (lo, hi) = match kind {
        ScheduleKind::Linear => (1e-4, 0.02),
        ScheduleKind::ScaledLinear => (0.00085f64.sqrt(), 0.012f64.sqrt()),
    };
    let mut alphas_bar = Vec::with_capacity(horizon + 1);
    alphas_bar.push(1.0);
    let mut acc = 1.0;
    for k in 0..horizon {
        let f = if horizon == 1 { 1.0 } else { k as f64 / (horizon - 1) as f64 };
        let b = lo + (hi - lo) * f;
        let beta = match kind {
            ScheduleKind::Linear => b,
            ScheduleKind::ScaledLinear => b * b,
        };
        acc *= 1.0 - beta;
        alphas_bar.push(acc);
    }
    Ok(NoiseSchedule { kind, horizon, skip, alphas_bar })
}

/// Which target a training timestep uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Standard,
    ControlInit,
}

impl NoiseSchedule {
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alphas_bar
            .get(t)
            .copied()
            .ok_or_else(|| Error::Schedule(format!("timestep {t} outside 0..={}", self.horizon)))
    }

    /// First timestep of the control-initialized region.
    pub fn boundary(&self) -> usize {
        self.horizon - self.skip
    }

    pub fn branch(&self, t: usize) -> Branch {
        if t >= self.boundary() {
            Branch::ControlInit
        } else {
            Branch::Standard
        }
    }

    /// Deterministic sampling timesteps `T-1, T-1-S, ...` down to the last
    /// non-negative one. Each is followed by a step to the next entry, and the
    /// last by a step to `alphas_bar[0] = 1`.
    pub fn sampling_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        if self.skip == 0 || steps == 0 || steps * self.skip > self.horizon {
            return Err(Error::Schedule(format!(
                "{steps} steps of stride {} do not fit horizon {}",
                self.skip, self.horizon
            )));
        }
        Ok((0..steps).map(|k| self.horizon - 1 - k * self.skip).collect())
    }

    fn check_control_region(&self, t: usize) -> Result<()> {
        if t >= self.horizon || t < self.boundary() {
            return Err(Error::Schedule(format!(
                "control initialization needs {} <= t < {}, got {t}",
                self.boundary(),
                self.horizon
            )));
        }
        Ok(())
    }
}

fn same_shape<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `ca * a + cb * b` elementwise with f64 coefficients.
fn lincomb<E: Element>(ca: f64, a: &Tensor<E>, cb: f64, b: &Tensor<E>) -> Result<Tensor<E>> {
    same_shape(a, b)?;
    Ok(a.zip_map(b, |x, y| {
        E::from_f64_lossy(ca * x.to_f64().unwrap_or(f64::NAN) + cb * y.to_f64().unwrap_or(f64::NAN))
    })?)
}

/// `z_t = sqrt(ab) z0 + sqrt(1 - ab) eps`.
pub fn forward_noise<E: Element>(z0: &Tensor<E>, t: usize, eps: &Tensor<E>, s: &NoiseSchedule) -> Result<Tensor<E>> {
    let ab = s.alpha_bar(t)?;
    lincomb(ab.sqrt(), z0, (1.0 - ab).sqrt(), eps)
}

/// `z0 = (z_t - sqrt(1 - ab) eps) / sqrt(ab)`.
pub fn recover_z0<E: Element>(z_t: &Tensor<E>, eps_hat: &Tensor<E>, t: usize, s: &NoiseSchedule) -> Result<Tensor<E>> {
    let ab = s.alpha_bar(t)?;
    if ab <= 0.0 {
        return Err(Error::Schedule(format!("alpha_bar is zero at t={t}; z0 is not recoverable")));
    }
    let r = ab.sqrt();
    lincomb(1.0 / r, z_t, -(1.0 - ab).sqrt() / r, eps_hat)
}

/// Noisy latent built from the control latent instead of the target.
pub fn control_init_latent<E: Element>(
    z_ctrl: &Tensor<E>,
    t: usize,
    eps: &Tensor<E>,
    s: &NoiseSchedule,
) -> Result<Tensor<E>> {
    s.check_control_region(t)?;
    forward_noise(z_ctrl, t, eps, s)
}

/// The noise that maps `z0` onto `z_t_new`, so that
/// `recover_z0(z_t_new, eps_new, t) == z0`.
pub fn control_init_target<E: Element>(
    z_t_new: &Tensor<E>,
    z0: &Tensor<E>,
    t: usize,
    s: &NoiseSchedule,
) -> Result<Tensor<E>> {
    s.check_control_region(t)?;
    let ab = s.alpha_bar(t)?;
    if ab >= 1.0 {
        return Err(Error::Schedule(format!("alpha_bar is one at t={t}; the noise target is undefined")));
    }
    let d = (1.0 - ab).sqrt();
    lincomb(1.0 / d, z_t_new, -ab.sqrt() / d, z0)
}

/// Denoiser input and regression target for one training example.
#[derive(Clone, Debug)]
pub struct TrainingPair<E: Element> {
    pub noisy: Tensor<E>,
    pub target: Tensor<E>,
    pub branch: Branch,
}

pub fn training_target<E: Element>(
    z0: &Tensor<E>,
    z_ctrl: &Tensor<E>,
    t: usize,
    eps: &Tensor<E>,
    s: &NoiseSchedule,
) -> Result<TrainingPair<E>> {
    if t >= s.horizon {
        return Err(Error::Schedule(format!("training timestep {t} outside 0..{}", s.horizon)));
    }
    same_shape(z0, z_ctrl)?;
    match s.branch(t) {
        Branch::Standard => {
            Ok(TrainingPair { noisy: forward_noise(z0, t, eps, s)?, target: eps.clone(), branch: Branch::Standard })
        }
        Branch::ControlInit => {
            let noisy = control_init_latent(z_ctrl, t, eps, s)?;
            let target = control_init_target(&noisy, z0, t, s)?;
            Ok(TrainingPair { noisy, target, branch: Branch::ControlInit })
        }
    }
}

/// One deterministic (eta = 0) update from `t` to `t_next` given the
/// predicted noise. Returns `(z_next, z0_hat)`.
pub fn ddim_step<E: Element>(
    z_t: &Tensor<E>,
    eps_hat: &Tensor<E>,
    t: usize,
    t_next: usize,
    s: &NoiseSchedule,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let z0 = recover_z0(z_t, eps_hat, t, s)?;
    let an = s.alpha_bar(t_next)?;
    let next = lincomb(an.sqrt(), &z0, (1.0 - an).sqrt(), eps_hat)?;
    Ok((next, z0))
}
