//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value; [`Graph::backward`]
//! walks the tape in reverse. Nodes that cannot reach a trainable leaf are
//! never differentiated.

use crate::element::{gemm, Element, MatRef};
use crate::error::{GradError, Result};
use crate::kernels::{col2im, im2col, sigmoid, softmax_rows, softplus, ConvSpec};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<E> {
    Input,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, E),
    ChannelBias { x: Var, v: Var },
    Silu(Var),
    Tanh(Var),
    LeakyRelu(Var, E),
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, xhat: Vec<E>, inv_std: Vec<E> },
    Upsample2x(Var),
    AvgPool2x(Var),
    ConcatChannels(Vec<Var>),
    ToTokens(Var),
    FromTokens(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<E> },
    MeanSpatial(Var),
    Reshape(Var),
    Mse(Var, Var),
    L1(Var, Var),
    BceLogits { x: Var, target: E },
}

struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
    needs_grad: bool,
}

/// Accumulated gradients, one slot per tape node.
pub struct Gradients<E> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, var: Var) -> Option<&Tensor<E>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

/// Per-parameter gradients gathered from a backward pass.
pub struct ParamGrads<E> {
    pub(crate) grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> ParamGrads<E> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<E>> {
        self.grads.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.sq_norm().to_f64().unwrap())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: E) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
}

#[derive(Default)]
pub struct Graph<E> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; never differentiated.
    pub fn input(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Leaf that is differentiated even though it is not a parameter
    /// (used by gradient checks on inputs).
    pub fn input_with_grad(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParamStore<E>, id: ParamId) -> Var {
        let trainable = store.is_trainable(id);
        self.push(store.value(id).clone(), Op::Param(id), trainable)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (co, ci, kh, kw) = self.value(w).dims4()?;
        if ci != c || kh != spec.kernel || kw != spec.kernel {
            return Err(GradError::Shape(format!(
                "conv weight {:?} incompatible with input {:?}",
                self.shape(w),
                self.shape(x)
            )));
        }
        if h + 2 * spec.padding < spec.kernel || wd + 2 * spec.padding < spec.kernel {
            return Err(GradError::Shape(format!("input {h}x{wd} smaller than kernel")));
        }
        let (ho, wo) = spec.out_dims(h, wd);
        let p = ho * wo;
        let kk = c * spec.kernel * spec.kernel;
        let mut out = vec![E::zero(); n * co * p];
        let mut cols = if spec.is_pointwise() { Vec::new() } else { vec![E::zero(); kk * p] };
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for bi in 0..n {
                let xb = &xv[bi * c * h * wd..(bi + 1) * c * h * wd];
                let colv: &[E] = if spec.is_pointwise() {
                    xb
                } else {
                    im2col(xb, c, h, wd, &spec, &mut cols);
                    &cols
                };
                gemm(
                    E::one(),
                    MatRef::new(wv, co, kk),
                    MatRef::new(colv, kk, p),
                    E::zero(),
                    &mut out[bi * co * p..(bi + 1) * co * p],
                    p,
                );
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                if bv.len() != co {
                    return Err(GradError::Shape("conv bias length mismatch".into()));
                }
                for bi in 0..n {
                    for (oc, &bias) in bv.iter().enumerate() {
                        let s = (bi * co + oc) * p;
                        out[s..s + p].iter_mut().for_each(|v| *v = *v + bias);
                    }
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::new([n, co, ho, wo], out)?, Op::Conv2d { x, w, b, spec }, ng))
    }

    /// `x @ w^T + b` over the last dimension of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (o, i) = self.value(w).dims2()?;
        let xs = self.shape(x).to_vec();
        if xs.last() != Some(&i) {
            return Err(GradError::Shape(format!("linear weight [{o}, {i}] vs input {xs:?}")));
        }
        let rows = self.value(x).numel() / i;
        let mut out = vec![E::zero(); rows * o];
        gemm(
            E::one(),
            MatRef::new(self.value(x).data(), rows, i),
            MatRef::new(self.value(w).data(), o, i).t(),
            E::zero(),
            &mut out,
            o,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(bv).for_each(|(v, &bb)| *v = *v + bb);
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = o;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = E::from_f64_lossy(s);
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    /// Adds `v[b, c]` to every spatial position of `x[b, c, :, :]`.
    pub fn channel_bias(&mut self, x: Var, v: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.shape(v) != [n, c] {
            return Err(GradError::Shape(format!("channel bias {:?} vs {:?}", self.shape(v), self.shape(x))));
        }
        let mut out = self.value(x).clone();
        let hw = h * w;
        let vv = self.value(v).data();
        for (i, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
            let add = vv[i];
            chunk.iter_mut().for_each(|e| *e = *e + add);
        }
        let ng = self.ng(x) || self.ng(v);
        Ok(self.push(out, Op::ChannelBias { x, v }, ng))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.ng(a);
        self.push(v, Op::Silu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = E::from_f64_lossy(slope);
        let v = self.value(a).map(|x| if x > E::zero() { x } else { x * s });
        let ng = self.ng(a);
        self.push(v, Op::LeakyRelu(a, s), ng)
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if groups == 0 || c % groups != 0 {
            return Err(GradError::Shape(format!("{c} channels not divisible into {groups} groups")));
        }
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(GradError::Shape("group norm affine size mismatch".into()));
        }
        let eps = E::from_f64_lossy(1e-5);
        let cg = c / groups;
        let len = cg * h * w;
        let lenf = E::from_usize(len).unwrap();
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![E::zero(); xv.len()];
        let mut inv_std = vec![E::zero(); n * groups];
        let mut out = vec![E::zero(); xv.len()];
        for gi in 0..n * groups {
            let s = gi * len;
            let seg = &xv[s..s + len];
            let mean = seg.iter().copied().sum::<E>() / lenf;
            let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() / lenf;
            let is = E::one() / (var + eps).sqrt();
            inv_std[gi] = is;
            let g0 = (gi % groups) * cg;
            for (j, &v) in seg.iter().enumerate() {
                let ch = g0 + j / (h * w);
                let xh = (v - mean) * is;
                xhat[s + j] = xh;
                out[s + j] = xh * gv[ch] + bv[ch];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            Tensor::new([n, c, h, w], out)?,
            Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std },
            ng,
        ))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let xv = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![E::zero(); n * c * h2 * w2];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * h2 * w2..(plane + 1) * h2 * w2];
            for y in 0..h2 {
                for xx in 0..w2 {
                    dst[y * w2 + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new([n, c, h2, w2], out)?, Op::Upsample2x(x), ng))
    }

    pub fn avg_pool2x(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(GradError::Shape(format!("avg_pool2x needs even dims, got {h}x{w}")));
        }
        let (h2, w2) = (h / 2, w / 2);
        let q = E::from_f64_lossy(0.25);
        let xv = self.value(x).data();
        let mut out = vec![E::zero(); n * c * h2 * w2];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for y in 0..h2 {
                for xx in 0..w2 {
                    let s = src[2 * y * w + 2 * xx]
                        + src[2 * y * w + 2 * xx + 1]
                        + src[(2 * y + 1) * w + 2 * xx]
                        + src[(2 * y + 1) * w + 2 * xx + 1];
                    out[plane * h2 * w2 + y * w2 + xx] = s * q;
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new([n, c, h2, w2], out)?, Op::AvgPool2x(x), ng))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let (n, _, h, w) = self.value(parts[0]).dims4()?;
        let mut chans = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(GradError::Shape(format!("concat {:?} with {:?}", self.shape(p), self.shape(parts[0]))));
            }
            chans.push(pc);
        }
        let ctot: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * ctot * hw);
        for bi in 0..n {
            for (&p, &pc) in parts.iter().zip(&chans) {
                out.extend_from_slice(&self.value(p).data()[bi * pc * hw..(bi + 1) * pc * hw]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::new([n, ctot, h, w], out)?, Op::ConcatChannels(parts.to_vec()), ng))
    }

    /// `[b, c, h, w] -> [b, h*w, c]`.
    pub fn to_tokens(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let out = transpose_last2(self.value(x).data(), n, c, h * w);
        let ng = self.ng(x);
        Ok(self.push(Tensor::new([n, h * w, c], out)?, Op::ToTokens(x), ng))
    }

    /// `[b, h*w, c] -> [b, c, h, w]`.
    pub fn from_tokens(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (n, p, c) = self.value(x).dims3()?;
        if p != h * w {
            return Err(GradError::Shape(format!("{p} tokens cannot form {h}x{w}")));
        }
        let out = transpose_last2(self.value(x).data(), n, p, c);
        let ng = self.ng(x);
        Ok(self.push(Tensor::new([n, c, h, w], out)?, Op::FromTokens(x), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape.to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Reshape(x), ng))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q: [b, nq, d]`, `k: [b, nk, d]`, `v: [b, nk, dv]`; `heads` must divide `d` and `dv`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (b, nq, d) = self.value(q).dims3()?;
        let (bk, nk, dk) = self.value(k).dims3()?;
        let (bv, nv, dv) = self.value(v).dims3()?;
        if bk != b || bv != b || dk != d || nv != nk || heads == 0 || d % heads != 0 || dv % heads != 0 {
            return Err(GradError::Shape(format!(
                "attention q {:?} k {:?} v {:?} heads {heads}",
                self.shape(q),
                self.shape(k),
                self.shape(v)
            )));
        }
        let (dh, dvh) = (d / heads, dv / heads);
        let scale = E::one() / E::from_usize(dh).unwrap().sqrt();
        let mut probs = vec![E::zero(); b * heads * nq * nk];
        let mut out = vec![E::zero(); b * nq * dv];
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        for bi in 0..b {
            for hi in 0..heads {
                let pr = &mut probs[(bi * heads + hi) * nq * nk..(bi * heads + hi + 1) * nq * nk];
                gemm(
                    scale,
                    MatRef::strided(&qv[bi * nq * d + hi * dh..], nq, dh, d),
                    MatRef::strided(&kv[bi * nk * d + hi * dh..], nk, dh, d).t(),
                    E::zero(),
                    pr,
                    nk,
                );
                softmax_rows(pr, nk);
                gemm(
                    E::one(),
                    MatRef::new(pr, nq, nk),
                    MatRef::strided(&vv[bi * nk * dv + hi * dvh..], nk, dvh, dv),
                    E::zero(),
                    &mut out[bi * nq * dv + hi * dvh..],
                    dv,
                );
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(Tensor::new([b, nq, dv], out)?, Op::Attention { q, k, v, heads, probs }, ng))
    }

    /// `[b, c, h, w] -> [b, c]` spatial mean.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = E::from_usize(h * w).unwrap();
        let out: Vec<E> = self.value(x).data().chunks(h * w).map(|ch| ch.iter().copied().sum::<E>() / hw).collect();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new([n, c], out)?, Op::MeanSpatial(x), ng))
    }

    /// Mean squared error, a scalar `[1]`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).same_shape(self.value(b))?;
        let n = E::from_usize(self.value(a).numel()).unwrap();
        let s: E = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b), ng))
    }

    /// Mean absolute error, a scalar `[1]`.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).same_shape(self.value(b))?;
        let n = E::from_usize(self.value(a).numel()).unwrap();
        let s: E = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| (x - y).abs()).sum();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(s / n), Op::L1(a, b), ng))
    }

    /// Mean binary cross-entropy of logits against a constant label.
    pub fn bce_logits(&mut self, x: Var, target: f64) -> Var {
        let t = E::from_f64_lossy(target);
        let xv = self.value(x);
        let n = E::from_usize(xv.numel()).unwrap();
        let s: E = xv.data().iter().map(|&v| softplus(v) - t * v).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s / n), Op::BceLogits { x, target: t }, ng)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        if self.value(loss).numel() != 1 {
            return Err(GradError::Shape(format!("backward needs a scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), E::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backward_node(i, &gy, &mut grads)?;
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    /// Sums leaf gradients per parameter.
    pub fn param_grads(&self, grads: &Gradients<E>, num_params: usize) -> Result<ParamGrads<E>> {
        let mut out: Vec<Option<Tensor<E>>> = (0..num_params).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                match &mut out[id.index()] {
                    Some(acc) => acc.add_assign(g)?,
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        Ok(ParamGrads { grads: out })
    }

    fn acc(&self, grads: &mut [Option<Tensor<E>>], v: Var, g: Tensor<E>) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn backward_node(&self, i: usize, gy: &Tensor<E>, grads: &mut [Option<Tensor<E>>]) -> Result<()> {
        let g = gy.data();
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d { x, w, b, spec } => self.conv_backward(*x, *w, *b, spec, gy, grads)?,
            Op::Linear { x, w, b } => {
                let (o, inn) = self.value(*w).dims2()?;
                let rows = g.len() / o;
                if self.ng(*x) {
                    let mut dx = vec![E::zero(); rows * inn];
                    gemm(
                        E::one(),
                        MatRef::new(g, rows, o),
                        MatRef::new(self.value(*w).data(), o, inn),
                        E::zero(),
                        &mut dx,
                        inn,
                    );
                    self.acc(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?)?;
                }
                if self.ng(*w) {
                    let mut dw = vec![E::zero(); o * inn];
                    gemm(
                        E::one(),
                        MatRef::new(g, rows, o).t(),
                        MatRef::new(self.value(*x).data(), rows, inn),
                        E::zero(),
                        &mut dw,
                        inn,
                    );
                    self.acc(grads, *w, Tensor::new([o, inn], dw)?)?;
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        let mut db = vec![E::zero(); o];
                        for row in g.chunks(o) {
                            db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                        }
                        self.acc(grads, *b, Tensor::new([o], db)?)?;
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, gy.clone())?;
                self.acc(grads, *b, gy.clone())?;
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, gy.clone())?;
                self.acc(grads, *b, gy.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, gy.zip_map(self.value(*b), |g, y| g * y)?)?;
                }
                if self.ng(*b) {
                    self.acc(grads, *b, gy.zip_map(self.value(*a), |g, x| g * x)?)?;
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(grads, *a, gy.map(|v| v * s))?;
            }
            Op::ChannelBias { x, v } => {
                self.acc(grads, *x, gy.clone())?;
                if self.ng(*v) {
                    let (_, _, h, w) = gy.dims4()?;
                    let dv: Vec<E> = g.chunks(h * w).map(|c| c.iter().copied().sum()).collect();
                    self.acc(grads, *v, Tensor::new(self.shape(*v).to_vec(), dv)?)?;
                }
            }
            Op::Silu(a) => {
                let d = gy.zip_map(self.value(*a), |g, x| {
                    let s = sigmoid(x);
                    g * s * (E::one() + x * (E::one() - s))
                })?;
                self.acc(grads, *a, d)?;
            }
            Op::Tanh(a) => {
                let d = gy.zip_map(&self.nodes[i].value, |g, y| g * (E::one() - y * y))?;
                self.acc(grads, *a, d)?;
            }
            Op::LeakyRelu(a, s) => {
                let s = *s;
                let d = gy.zip_map(self.value(*a), |g, x| if x > E::zero() { g } else { g * s })?;
                self.acc(grads, *a, d)?;
            }
            Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std } => {
                let (n, c, h, w) = gy.dims4()?;
                let hw = h * w;
                let cg = c / groups;
                let len = cg * hw;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![E::zero(); c];
                let mut dbeta = vec![E::zero(); c];
                let mut dx = vec![E::zero(); g.len()];
                let lenf = E::from_usize(len).unwrap();
                for gi in 0..n * groups {
                    let s = gi * len;
                    let g0 = (gi % groups) * cg;
                    let mut m1 = E::zero();
                    let mut m2 = E::zero();
                    for j in 0..len {
                        let ch = g0 + j / hw;
                        let dxh = g[s + j] * gam[ch];
                        dgamma[ch] = dgamma[ch] + g[s + j] * xhat[s + j];
                        dbeta[ch] = dbeta[ch] + g[s + j];
                        m1 = m1 + dxh;
                        m2 = m2 + dxh * xhat[s + j];
                    }
                    m1 = m1 / lenf;
                    m2 = m2 / lenf;
                    let is = inv_std[gi];
                    for j in 0..len {
                        let ch = g0 + j / hw;
                        let dxh = g[s + j] * gam[ch];
                        dx[s + j] = is * (dxh - m1 - xhat[s + j] * m2);
                    }
                }
                self.acc(grads, *x, Tensor::new([n, c, h, w], dx)?)?;
                self.acc(grads, *gamma, Tensor::new(self.shape(*gamma).to_vec(), dgamma)?)?;
                self.acc(grads, *beta, Tensor::new(self.shape(*beta).to_vec(), dbeta)?)?;
            }
            Op::Upsample2x(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let w2 = 2 * w;
                let mut dx = vec![E::zero(); n * c * h * w];
                for plane in 0..n * c {
                    let src = &g[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            let o = 2 * y * w2 + 2 * xx;
                            dx[plane * h * w + y * w + xx] = src[o] + src[o + 1] + src[o + w2] + src[o + w2 + 1];
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new([n, c, h, w], dx)?)?;
            }
            Op::AvgPool2x(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let (h2, w2) = (h / 2, w / 2);
                let q = E::from_f64_lossy(0.25);
                let mut dx = vec![E::zero(); n * c * h * w];
                for plane in 0..n * c {
                    for y in 0..h {
                        for xx in 0..w {
                            dx[plane * h * w + y * w + xx] = g[plane * h2 * w2 + (y / 2) * w2 + xx / 2] * q;
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new([n, c, h, w], dx)?)?;
            }
            Op::ConcatChannels(parts) => {
                let (n, ctot, h, w) = gy.dims4()?;
                let hw = h * w;
                let mut off = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(n * pc * hw);
                        for bi in 0..n {
                            let s = (bi * ctot + off) * hw;
                            d.extend_from_slice(&g[s..s + pc * hw]);
                        }
                        self.acc(grads, p, Tensor::new([n, pc, h, w], d)?)?;
                    }
                    off += pc;
                }
            }
            Op::ToTokens(x) => {
                let (n, p, c) = gy.dims3()?;
                let d = transpose_last2(g, n, p, c);
                self.acc(grads, *x, Tensor::new(self.shape(*x).to_vec(), d)?)?;
            }
            Op::FromTokens(x) => {
                let (n, c, h, w) = gy.dims4()?;
                let d = transpose_last2(g, n, c, h * w);
                self.acc(grads, *x, Tensor::new(self.shape(*x).to_vec(), d)?)?;
            }
            Op::Reshape(x) => {
                self.acc(grads, *x, gy.clone().reshape(self.shape(*x).to_vec())?)?;
            }
            Op::Attention { q, k, v, heads, probs } => {
                self.attention_backward(*q, *k, *v, *heads, probs, g, grads)?;
            }
            Op::MeanSpatial(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let hw = E::from_usize(h * w).unwrap();
                let mut dx = vec![E::zero(); n * c * h * w];
                for (chunk, &gv) in dx.chunks_mut(h * w).zip(g) {
                    chunk.fill(gv / hw);
                }
                self.acc(grads, *x, Tensor::new([n, c, h, w], dx)?)?;
            }
            Op::Mse(a, b) => {
                let n = E::from_usize(self.value(*a).numel()).unwrap();
                let k = g[0] * E::from_f64_lossy(2.0) / n;
                let d = self.value(*a).zip_map(self.value(*b), |x, y| (x - y) * k)?;
                if self.ng(*b) {
                    self.acc(grads, *b, d.map(|v| -v))?;
                }
                self.acc(grads, *a, d)?;
            }
            Op::L1(a, b) => {
                let n = E::from_usize(self.value(*a).numel()).unwrap();
                let k = g[0] / n;
                let d = self.value(*a).zip_map(self.value(*b), |x, y| {
                    if x > y {
                        k
                    } else if x < y {
                        -k
                    } else {
                        E::zero()
                    }
                })?;
                if self.ng(*b) {
                    self.acc(grads, *b, d.map(|v| -v))?;
                }
                self.acc(grads, *a, d)?;
            }
            Op::BceLogits { x, target } => {
                let xv = self.value(*x);
                let k = g[0] / E::from_usize(xv.numel()).unwrap();
                let t = *target;
                self.acc(grads, *x, xv.map(|v| (sigmoid(v) - t) * k))?;
            }
        }
        Ok(())
    }

    fn conv_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: &ConvSpec,
        gy: &Tensor<E>,
        grads: &mut [Option<Tensor<E>>],
    ) -> Result<()> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (co, _, _, _) = self.value(w).dims4()?;
        let (_, _, ho, wo) = gy.dims4()?;
        let p = ho * wo;
        let kk = c * spec.kernel * spec.kernel;
        let g = gy.data();
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let need_x = self.ng(x);
        let need_w = self.ng(w);
        let mut dw = if need_w { vec![E::zero(); co * kk] } else { Vec::new() };
        let mut dx = if need_x { vec![E::zero(); n * c * h * wd] } else { Vec::new() };
        let pointwise = spec.is_pointwise();
        let mut cols = if pointwise { Vec::new() } else { vec![E::zero(); kk * p] };
        let mut dcols = if pointwise || !need_x { Vec::new() } else { vec![E::zero(); kk * p] };
        for bi in 0..n {
            let gb = &g[bi * co * p..(bi + 1) * co * p];
            let xb = &xv[bi * c * h * wd..(bi + 1) * c * h * wd];
            if need_w {
                let colv: &[E] = if pointwise {
                    xb
                } else {
                    im2col(xb, c, h, wd, spec, &mut cols);
                    &cols
                };
                gemm(E::one(), MatRef::new(gb, co, p), MatRef::new(colv, kk, p).t(), E::one(), &mut dw, kk);
            }
            if need_x {
                let dxb = &mut dx[bi * c * h * wd..(bi + 1) * c * h * wd];
                if pointwise {
                    gemm(E::one(), MatRef::new(wv, co, kk).t(), MatRef::new(gb, co, p), E::zero(), dxb, p);
                } else {
                    gemm(E::one(), MatRef::new(wv, co, kk).t(), MatRef::new(gb, co, p), E::zero(), &mut dcols, p);
                    col2im(&dcols, c, h, wd, spec, dxb);
                }
            }
        }
        if need_x {
            self.acc(grads, x, Tensor::new([n, c, h, wd], dx)?)?;
        }
        if need_w {
            self.acc(grads, w, Tensor::new(self.shape(w).to_vec(), dw)?)?;
        }
        if let Some(b) = b {
            if self.ng(b) {
                let mut db = vec![E::zero(); co];
                for (i, chunk) in g.chunks(p).enumerate() {
                    db[i % co] = db[i % co] + chunk.iter().copied().sum::<E>();
                }
                self.acc(grads, b, Tensor::new([co], db)?)?;
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[E],
        g: &[E],
        grads: &mut [Option<Tensor<E>>],
    ) -> Result<()> {
        let (b, nq, d) = self.value(q).dims3()?;
        let (_, nk, dv) = self.value(v).dims3()?;
        let (dh, dvh) = (d / heads, dv / heads);
        let scale = E::one() / E::from_usize(dh).unwrap().sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![E::zero(); qv.len()];
        let mut dk = vec![E::zero(); kv.len()];
        let mut dvv = vec![E::zero(); vv.len()];
        let mut dp = vec![E::zero(); nq * nk];
        for bi in 0..b {
            for hi in 0..heads {
                let pr = &probs[(bi * heads + hi) * nq * nk..(bi * heads + hi + 1) * nq * nk];
                let go = MatRef::strided(&g[bi * nq * dv + hi * dvh..], nq, dvh, dv);
                gemm(E::one(), MatRef::new(pr, nq, nk).t(), go, E::one(), &mut dvv[bi * nk * dv + hi * dvh..], dv);
                gemm(
                    E::one(),
                    go,
                    MatRef::strided(&vv[bi * nk * dv + hi * dvh..], nk, dvh, dv).t(),
                    E::zero(),
                    &mut dp,
                    nk,
                );
                for (drow, prow) in dp.chunks_mut(nk).zip(pr.chunks(nk)) {
                    let dot: E = drow.iter().zip(prow).map(|(&a, &p)| a * p).sum();
                    drow.iter_mut().zip(prow).for_each(|(a, &p)| *a = p * (*a - dot));
                }
                gemm(
                    scale,
                    MatRef::new(&dp, nq, nk),
                    MatRef::strided(&kv[bi * nk * d + hi * dh..], nk, dh, d),
                    E::one(),
                    &mut dq[bi * nq * d + hi * dh..],
                    d,
                );
                gemm(
                    scale,
                    MatRef::new(&dp, nq, nk).t(),
                    MatRef::strided(&qv[bi * nq * d + hi * dh..], nq, dh, d),
                    E::one(),
                    &mut dk[bi * nk * d + hi * dh..],
                    d,
                );
            }
        }
        self.acc(grads, q, Tensor::new(self.shape(q).to_vec(), dq)?)?;
        self.acc(grads, k, Tensor::new(self.shape(k).to_vec(), dk)?)?;
        self.acc(grads, v, Tensor::new(self.shape(v).to_vec(), dvv)?)?;
        Ok(())
    }
}

/// Batched transpose of the trailing `rows x cols` matrices.
fn transpose_last2<E: Element>(src: &[E], n: usize, rows: usize, cols: usize) -> Vec<E> {
    let mut out = vec![E::zero(); src.len()];
    for bi in 0..n {
        let s = &src[bi * rows * cols..(bi + 1) * rows * cols];
        let d = &mut out[bi * rows * cols..(bi + 1) * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                d[c * rows + r] = s[r * cols + c];
            }
        }
    }
    out
}
