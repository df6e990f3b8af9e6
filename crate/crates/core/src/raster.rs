//! Raster containers and resampling shared by every stage.
//!
//! Continuous coordinates put pixel `(i, j)` at the unit square
//! `[j, j+1) x [i, i+1)`; its center is `(j + 0.5, i + 0.5)`.

use std::path::Path;

use acdg_grad::Tensor;
use image::{GrayImage, Rgb, RgbImage, RgbaImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Rgb8 = [u8; 3];

/// Planar float image, intensities in `0..=255` units.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn filled(height: usize, width: usize, color: [f32; 3]) -> Self {
        let mut img = Self::new(3, height, width);
        for (c, v) in color.iter().enumerate() {
            img.plane_mut(c).fill(*v);
        }
        img
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Self::new(3, h, w);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out.data[c * h * w + y as usize * w + x as usize] = p[c] as f32;
            }
        }
        out
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self { channels: 1, height: h, width: w, data: img.as_raw().iter().map(|&v| v as f32).collect() }
    }

    pub fn to_rgb(&self) -> RgbImage {
        assert_eq!(self.channels, 3);
        let (h, w) = (self.height, self.width);
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            Rgb([0, 1, 2].map(|c| quantize(self.data[c * h * w + i])))
        })
    }

    pub fn to_gray(&self) -> GrayImage {
        assert_eq!(self.channels, 1);
        GrayImage::from_raw(self.width as u32, self.height as u32, self.data.iter().map(|&v| quantize(v)).collect())
            .expect("buffer size")
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, v: [f32; 3]) {
        for (c, &val) in v.iter().enumerate() {
            self.set(c, y, x, val);
        }
    }

    /// Bilinear sample at continuous point `(x, y)` with clamp-to-edge.
    pub fn sample(&self, c: usize, x: f32, y: f32) -> f32 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f32);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f32);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = fx - x0 as f32;
        let ay = fy - y0 as f32;
        let top = self.get(c, y0, x0) * (1.0 - ax) + self.get(c, y0, x1) * ax;
        let bot = self.get(c, y1, x0) * (1.0 - ax) + self.get(c, y1, x1) * ax;
        top * (1.0 - ay) + bot * ay
    }

    /// Resamples the continuous rectangle `view` onto an `out_h x out_w` grid.
    ///
    /// Minification averages `ceil(scale)^2` bilinear taps per output pixel.
    pub fn resample_view(&self, view: View, out_h: usize, out_w: usize) -> FloatImage {
        let sx = view.w / out_w as f32;
        let sy = view.h / out_h as f32;
        let ss = sx.max(sy).ceil().max(1.0) as usize;
        let inv = 1.0 / (ss * ss) as f32;
        let mut out = FloatImage::new(self.channels, out_h, out_w);
        for c in 0..self.channels {
            for i in 0..out_h {
                for j in 0..out_w {
                    let mut acc = 0.0;
                    for a in 0..ss {
                        for b in 0..ss {
                            let px = view.x + (j as f32 + (b as f32 + 0.5) / ss as f32) * sx;
                            let py = view.y + (i as f32 + (a as f32 + 0.5) / ss as f32) * sy;
                            acc += self.sample(c, px, py);
                        }
                    }
                    out.set(c, i, j, acc * inv);
                }
            }
        }
        out
    }

    /// Mean over `factor x factor` blocks; dims must divide.
    pub fn downsample_area(&self, factor: usize) -> Result<FloatImage> {
        if self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::Shape(format!("{}x{} not divisible by {factor}", self.height, self.width)));
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let mut out = FloatImage::new(self.channels, h, w);
        let inv = 1.0 / (factor * factor) as f32;
        for c in 0..self.channels {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for a in 0..factor {
                        for b in 0..factor {
                            acc += self.get(c, i * factor + a, j * factor + b);
                        }
                    }
                    out.set(c, i, j, acc * inv);
                }
            }
        }
        Ok(out)
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> FloatImage {
        let mut out = FloatImage::new(self.channels, h, w);
        for c in 0..self.channels {
            for i in 0..h {
                for j in 0..w {
                    out.set(c, i, j, self.get(c, y + i, x + j));
                }
            }
        }
        out
    }

    /// `[1, c, h, w]` tensor with intensities mapped to `[-1, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(
            [1, self.channels, self.height, self.width],
            self.data.iter().map(|&v| v / 127.5 - 1.0).collect(),
        )
        .expect("consistent dims")
    }

    /// Inverse of [`FloatImage::to_tensor`] for a single batch item.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<FloatImage> {
        let (n, c, h, w) = t.dims4()?;
        if n != 1 {
            return Err(Error::Shape(format!("expected batch of one, got {n}")));
        }
        Ok(FloatImage { channels: c, height: h, width: w, data: t.data().iter().map(|&v| (v + 1.0) * 127.5).collect() })
    }

    pub fn clamp_range(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 255.0));
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn luminance(&self, y: usize, x: usize) -> f32 {
        let [r, g, b] = self.pixel(y, x);
        0.299 * r + 0.587 * g + 0.114 * b
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Continuous rectangle in source coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl View {
    pub fn full(height: usize, width: usize) -> Self {
        Self { x: 0.0, y: 0.0, w: width as f32, h: height as f32 }
    }

    /// Maps a continuous source point into output-grid coordinates.
    pub fn forward(&self, p: (f32, f32), out_h: usize, out_w: usize) -> (f32, f32) {
        ((p.0 - self.x) * out_w as f32 / self.w, (p.1 - self.y) * out_h as f32 / self.h)
    }

    /// Maps an output-grid continuous point back to source coordinates.
    pub fn inverse(&self, p: (f32, f32), out_h: usize, out_w: usize) -> (f32, f32) {
        (self.x + p.0 * self.w / out_w as f32, self.y + p.1 * self.h / out_h as f32)
    }
}

/// Per-pixel `u8` label raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone()).expect("buffer size")
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Self { height: img.height() as usize, width: img.width() as usize, data: img.as_raw().clone() }
    }
}

/// Binary mask as a flat `bool` buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Pixel-center centroid `(x, y)`, or `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f32, f32)> {
        let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| ((sx / n as f64) as f32, (sy / n as f64) as f32))
    }

    /// Inclusive-exclusive bounding box `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    b = Some(match b {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        b
    }
}

pub fn save_png_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn save_png_rgba(img: &RgbaImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn save_png_gray(img: &GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

/// Lossless PNG bytes of an RGB raster.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn rgb_f32(c: Rgb8) -> [f32; 3] {
    [c[0] as f32, c[1] as f32, c[2] as f32]
}

pub fn luminance(c: [f32; 3]) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}
