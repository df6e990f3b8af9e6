//! Parameterized layers built on [`Graph`] ops.

use rand::Rng;

use crate::element::Element;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::kernels::{ConvSpec, Padding};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv2d {
    /// PyTorch-style uniform fan-in initialization.
    #[allow(clippy::too_many_arguments)]
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        mode: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((cin * kernel * kernel) as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[cout, cin, kernel, kernel], bound, rng);
        let bias = Some(store.uniform(format!("{name}.bias"), &[cout], bound, rng));
        Self { weight, bias, spec: ConvSpec { kernel, stride, padding: kernel / 2, mode } }
    }

    /// Zero-initialized pointwise convolution (control-branch injection).
    pub fn zeroed<E: Element>(store: &mut ParamStore<E>, name: &str, cin: usize, cout: usize) -> Self {
        let weight = store.zeros(format!("{name}.weight"), &[cout, cin, 1, 1]);
        let bias = Some(store.zeros(format!("{name}.bias"), &[cout]));
        Self { weight, bias, spec: ConvSpec { kernel: 1, stride: 1, padding: 0, mode: Padding::Zeros } }
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<E>, store: &ParamStore<E>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[output, input], bound, rng);
        let bias = Some(store.uniform(format!("{name}.bias"), &[output], bound, rng));
        Self { weight, bias }
    }

    pub fn zeroed<E: Element>(store: &mut ParamStore<E>, name: &str, input: usize, output: usize) -> Self {
        let weight = store.zeros(format!("{name}.weight"), &[output, input]);
        let bias = Some(store.zeros(format!("{name}.bias"), &[output]));
        Self { weight, bias }
    }

    pub fn no_bias<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[output, input], bound, rng);
        Self { weight, bias: None }
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<E>, store: &ParamStore<E>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<E: Element>(store: &mut ParamStore<E>, name: &str, channels: usize, groups: usize) -> Self {
        let groups = groups.min(channels).max(1);
        assert_eq!(channels % groups, 0, "{channels} channels vs {groups} groups");
        Self {
            gamma: store.ones(format!("{name}.gamma"), &[channels]),
            beta: store.zeros(format!("{name}.beta"), &[channels]),
            groups,
        }
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<E>, store: &ParamStore<E>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.group_norm(x, gamma, beta, self.groups)
    }
}
