use crate::element::Element;
use crate::graph::ParamGrads;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0) }
    }
}

/// Adam with bias correction. Frozen parameters keep their moments untouched.
pub struct Adam<E> {
    pub config: AdamConfig,
    m: Vec<Option<Tensor<E>>>,
    v: Vec<Option<Tensor<E>>>,
    step: u64,
}

impl<E: Element> Adam<E> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, m: Vec::new(), v: Vec::new(), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update; returns the pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore<E>, grads: &mut ParamGrads<E>) -> f64 {
        let norm = grads.global_norm();
        if let Some(max) = self.config.clip_norm {
            if norm > max && norm.is_finite() {
                grads.scale(E::from_f64_lossy(max / norm));
            }
        }
        self.step += 1;
        let c = self.config;
        let b1 = E::from_f64_lossy(c.beta1);
        let b2 = E::from_f64_lossy(c.beta2);
        let one = E::one();
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let lr_t = E::from_f64_lossy(c.lr * bc2.sqrt() / bc1);
        let eps = E::from_f64_lossy(c.eps * bc2.sqrt());
        if self.m.len() < store.len() {
            self.m.resize_with(store.len(), || None);
            self.v.resize_with(store.len(), || None);
        }
        for id in store.ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let p = store.value_mut(id);
            for (((pv, mv), vv), &gv) in
                p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                *pv = *pv - lr_t * *mv / (vv.sqrt() + eps);
            }
        }
        norm
    }
}
