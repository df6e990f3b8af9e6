//! Band-limited reconstruction error and the native-vs-upsampled roundtrip
//! comparison.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::raster::{FloatImage, View};

/// Upper radial-frequency edges (cycles per pixel) of the four bands; the
/// last band runs to the corner of the spectrum.
pub const BAND_EDGES: [f64; 3] = [1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0];
pub const BANDS: usize = 4;

pub fn band_of(fy: f64, fx: f64) -> usize {
    let r = (fy * fy + fx * fx).sqrt();
    BAND_EDGES.iter().position(|&e| r < e).unwrap_or(BANDS - 1)
}

/// Signed frequency of DFT index `k` of length `n`.
fn freq(k: usize, n: usize) -> f64 {
    let k = if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
    k / n as f64
}

/// Contribution of each band to the MSE of `a - b`, averaged over channels.
/// The entries sum to the plain MSE.
pub fn band_errors(a: &FloatImage, b: &FloatImage) -> Result<[f64; BANDS]> {
    if (a.channels, a.height, a.width) != (b.channels, b.height, b.width) {
        return Err(Error::Shape("band_errors needs equal shapes".into()));
    }
    let (h, w) = (a.height, a.width);
    let mut planner = FftPlanner::<f64>::new();
    let row = planner.plan_fft_forward(w);
    let col = planner.plan_fft_forward(h);
    let mut out = [0.0; BANDS];
    let mut buf = vec![Complex::new(0.0, 0.0); h * w];
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for c in 0..a.channels {
        for (i, v) in buf.iter_mut().enumerate() {
            *v = Complex::new((a.plane(c)[i] - b.plane(c)[i]) as f64, 0.0);
        }
        for r in buf.chunks_mut(w) {
            row.process(r);
        }
        for j in 0..w {
            for i in 0..h {
                column[i] = buf[i * w + j];
            }
            col.process(&mut column);
            for i in 0..h {
                buf[i * w + j] = column[i];
            }
        }
        for i in 0..h {
            for j in 0..w {
                out[band_of(freq(i, h), freq(j, w))] += buf[i * w + j].norm_sqr();
            }
        }
    }
    let norm = (a.channels * h * w * h * w) as f64;
    Ok(out.map(|v| v / norm))
}

pub fn mse(a: &FloatImage, b: &FloatImage) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.data.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandError {
    /// Radial range in cycles per pixel.
    pub lo: f64,
    pub hi: f64,
    pub native: f64,
    pub upsampled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    /// `(x, y, w, h)` of the compared window in image pixels.
    pub window: [usize; 4],
    pub bands: Vec<BandError>,
    /// Full-spectrum MSE of `(native, upsampled)`.
    pub native_vs_upsampled: (f64, f64),
}

impl RoundtripReport {
    pub fn top_band(&self) -> &BandError {
        &self.bands[BANDS - 1]
    }
}

/// Default comparison window: the central half-size crop.
pub fn central_window(height: usize, width: usize) -> [usize; 4] {
    let (w, h) = (width / 2, height / 2);
    [(width - w) / 2, (height - h) / 2, w, h]
}

/// Compares two roundtrips of the window `[x, y, w, h]`, which must be half
/// the image size: (a) the full image through the autoencoder, then cropped;
/// (b) the crop upsampled 2x (bilinear) to full size, through the
/// autoencoder, then area-downsampled back. Both are scored against the
/// original crop.
pub fn roundtrip_degradation(ae: &Autoencoder, image: &FloatImage, window: [usize; 4]) -> Result<RoundtripReport> {
    let [x, y, w, h] = window;
    if 2 * w != image.width || 2 * h != image.height || x + w > image.width || y + h > image.height {
        return Err(Error::Shape(format!(
            "window {window:?} must be half of the {}x{} image and inside it",
            image.height, image.width
        )));
    }
    let reference = image.crop(x, y, w, h);
    let native = ae.roundtrip(image)?.crop(x, y, w, h);
    let up = image.resample_view(View { x: x as f32, y: y as f32, w: w as f32, h: h as f32 }, image.height, image.width);
    let upsampled = ae.roundtrip(&up)?.downsample_area(2)?;
    let bn = band_errors(&native, &reference)?;
    let bu = band_errors(&upsampled, &reference)?;
    let mut lo = 0.0;
    let bands = (0..BANDS)
        .map(|k| {
            let hi = BAND_EDGES.get(k).copied().unwrap_or(std::f64::consts::FRAC_1_SQRT_2);
            let b = BandError { lo, hi, native: bn[k], upsampled: bu[k] };
            lo = hi;
            b
        })
        .collect();
    Ok(RoundtripReport { window, bands, native_vs_upsampled: (mse(&native, &reference), mse(&upsampled, &reference)) })
}
