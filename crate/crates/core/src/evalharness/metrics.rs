//! Image metrics and bootstrap intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::raster::{FloatImage, Mask};

/// Mean squared error over the pixels of `mask`, all channels, in squared
/// intensity units. `None` for an empty mask.
pub fn masked_mse(a: &FloatImage, b: &FloatImage, mask: &Mask) -> Option<f64> {
    let (mut s, mut n) = (0.0f64, 0usize);
    for (i, &m) in mask.data.iter().enumerate() {
        if !m {
            continue;
        }
        let y = i / mask.width;
        let x = i % mask.width;
        for c in 0..a.channels {
            s += ((a.get(c, y, x) - b.get(c, y, x)) as f64).powi(2);
            n += 1;
        }
    }
    (n > 0).then(|| s / n as f64)
}

fn luma(img: &FloatImage) -> Vec<f64> {
    (0..img.height * img.width).map(|i| img.luminance(i / img.width, i % img.width) as f64).collect()
}

/// Mean structural similarity of the luminance over all 7x7 windows.
pub fn ssim(a: &FloatImage, b: &FloatImage) -> f64 {
    const K: usize = 7;
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let (la, lb) = (luma(a), luma(b));
    let (h, w) = (a.height, a.width);
    let n = (K * K) as f64;
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h.saturating_sub(K) {
        for x in 0..=w.saturating_sub(K) {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in y..y + K {
                for j in x..x + K {
                    let (p, q) = (la[i * w + j], lb[i * w + j]);
                    ma += p;
                    mb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            ma /= n;
            mb /= n;
            let va = saa / n - ma * ma;
            let vb = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count.max(1) as f64
}

/// Normalized cross-correlation of the luminance over `mask`. Zero when
/// either side is constant there.
pub fn ncc(a: &FloatImage, b: &FloatImage, mask: &Mask) -> Option<f64> {
    let (la, lb) = (luma(a), luma(b));
    let idx: Vec<usize> = (0..mask.data.len()).filter(|&i| mask.data[i]).collect();
    if idx.is_empty() {
        return None;
    }
    let n = idx.len() as f64;
    let ma = idx.iter().map(|&i| la[i]).sum::<f64>() / n;
    let mb = idx.iter().map(|&i| lb[i]).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &i in &idx {
        let (p, q) = (la[i] - ma, lb[i] - mb);
        sab += p * q;
        saa += p * p;
        sbb += q * q;
    }
    let d = (saa * sbb).sqrt();
    Some(if d > 1e-12 { sab / d } else { 0.0 })
}

/// Mean with a percentile-bootstrap confidence interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Interval {
    /// True when the intervals share no point.
    pub fn disjoint(&self, other: &Interval) -> bool {
        self.hi < other.lo || other.hi < self.lo
    }
}

/// Percentile bootstrap of the mean with `resamples` draws at `level`
/// (e.g. 0.9). `None` for an empty sample.
pub fn bootstrap_mean(values: &[f64], resamples: usize, level: f64, seed: u64) -> Option<Interval> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    Some(Interval { mean, lo: at(tail), hi: at(1.0 - tail), n })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}
