//! Raw numeric kernels shared by forward and backward passes.

use crate::element::Element;

/// Border handling for convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zeros,
    Replicate,
}

/// Geometry of a square-kernel 2-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub mode: Padding,
}

impl ConvSpec {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    pub(crate) fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Source index along one axis for output position `o` and kernel tap `t`.
    #[inline]
    fn source(&self, o: usize, t: usize, len: usize) -> Option<usize> {
        let i = (o * self.stride + t) as isize - self.padding as isize;
        if i >= 0 && (i as usize) < len {
            Some(i as usize)
        } else {
            match self.mode {
                Padding::Zeros => None,
                Padding::Replicate => Some(i.clamp(0, len as isize - 1) as usize),
            }
        }
    }
}

/// Unfold one `c x h x w` image into `(c*k*k) x (ho*wo)` columns.
pub(crate) fn im2col<E: Element>(x: &[E], c: usize, h: usize, w: usize, spec: &ConvSpec, cols: &mut [E]) {
    let k = spec.kernel;
    let (ho, wo) = spec.out_dims(h, w);
    let p = ho * wo;
    debug_assert_eq!(cols.len(), c * k * k * p);
    let xs: Vec<Vec<Option<usize>>> = (0..k).map(|t| (0..wo).map(|o| spec.source(o, t, w)).collect()).collect();
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * p;
                let xmap = &xs[kj];
                for oy in 0..ho {
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    match spec.source(oy, ki, h) {
                        None => dst.fill(E::zero()),
                        Some(iy) => {
                            let src = &plane[iy * w..(iy + 1) * w];
                            for (d, ix) in dst.iter_mut().zip(xmap) {
                                *d = match ix {
                                    Some(ix) => src[*ix],
                                    None => E::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image gradient.
pub(crate) fn col2im<E: Element>(cols: &[E], c: usize, h: usize, w: usize, spec: &ConvSpec, dx: &mut [E]) {
    let k = spec.kernel;
    let (ho, wo) = spec.out_dims(h, w);
    let p = ho * wo;
    let xs: Vec<Vec<Option<usize>>> = (0..k).map(|t| (0..wo).map(|o| spec.source(o, t, w)).collect()).collect();
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * p;
                let xmap = &xs[kj];
                for oy in 0..ho {
                    let Some(iy) = spec.source(oy, ki, h) else { continue };
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[iy * w..(iy + 1) * w];
                    for (s, ix) in src.iter().zip(xmap) {
                        if let Some(ix) = ix {
                            dst[*ix] = dst[*ix] + *s;
                        }
                    }
                }
            }
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub(crate) fn softplus<E: Element>(x: E) -> E {
    x.max(E::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid<E: Element>(x: E) -> E {
    E::one() / (E::one() + (-x).exp())
}

/// In-place row softmax over a `rows x cols` matrix.
pub(crate) fn softmax_rows<E: Element>(m: &mut [E], cols: usize) {
    for row in m.chunks_mut(cols) {
        let max = row.iter().copied().fold(E::neg_infinity(), E::max);
        let mut total = E::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
}
