// SPDX-License-Identifier: Apache-2.0

//! Single-channel rasters and the comparison metrics used throughout the
//! pipeline.
//!
//! [`Raster`] holds grayscale values in `[0, 1]` (layouts, ground truths,
//! predictions, masks); [`BinaryRaster`] holds exact `{0, 1}` images.
//! Both are row-major, indexed `(x, y)` with `x` the column.

mod io;
mod metrics;

pub use io::{load_binary, load_image, save_binary, save_image, to_byte};
pub use metrics::{iou, pixel_error_rate, ssim, ssim_with, SsimParams};

use crate::error::{check_dims, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        validate_dims(width, height, pixels.len())?;
        if let Some((i, p)) = pixels.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidValue(format!("pixel {i} = {p} lies outside [0, 1]")));
        }
        Ok(Raster { width, height, pixels })
    }

    /// Builds a raster, clamping every value into `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(width: usize, height: usize, mut pixels: Vec<f64>) -> Result<Self> {
        validate_dims(width, height, pixels.len())?;
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Ok(Raster { width, height, pixels })
    }

    /// # Panics
    /// If `value` is outside `[0, 1]` or either dimension is zero.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value), "fill value {value} outside [0, 1]");
        assert!(width > 0 && height > 0, "empty raster");
        Raster {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Pixel count `n`.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.len() as f64
    }

    pub fn check_same_dims(&self, other: &Raster) -> Result<()> {
        check_dims(self.dims(), other.dims())
    }
}

/// An image whose pixels are exactly 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryRaster {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl BinaryRaster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        validate_dims(width, height, pixels.len())?;
        if let Some(i) = pixels.iter().position(|&p| p > 1) {
            return Err(Error::InvalidValue(format!("pixel {i} = {} is not binary", pixels[i])));
        }
        Ok(BinaryRaster { width, height, pixels })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "empty raster");
        BinaryRaster {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut r = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                r.pixels[y * width + x] = f(x, y) as u8;
            }
        }
        r
    }

    /// Converts an exact 0/1 raster; any other value is an error.
    pub fn from_raster(r: &Raster) -> Result<Self> {
        let mut pixels = Vec::with_capacity(r.len());
        for (i, &p) in r.pixels().iter().enumerate() {
            if p == 0.0 {
                pixels.push(0);
            } else if p == 1.0 {
                pixels.push(1);
            } else {
                return Err(Error::InvalidValue(format!("pixel {i} = {p} is not binary")));
            }
        }
        Ok(BinaryRaster {
            width: r.width(),
            height: r.height(),
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x] == 1
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.pixels[y * self.width + x] = on as u8;
    }

    /// Sets every pixel of the half-open rectangle `[x0, x1) x [y0, y1)`,
    /// clipped to the raster.
    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                self.pixels[y * self.width + x] = 1;
            }
        }
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.pixels.iter().map(|&p| p as usize).sum()
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| p as f64).collect(),
        }
    }

    pub fn check_same_dims(&self, other: &BinaryRaster) -> Result<()> {
        check_dims(self.dims(), other.dims())
    }
}

/// Thresholds a raster: 1 where the pixel is strictly above `t`.
///
/// # Panics
/// If `t` is not inside `(0, 1)`.
pub fn binarize(r: &Raster, t: f64) -> BinaryRaster {
    assert!(t > 0.0 && t < 1.0, "threshold {t} outside (0, 1)");
    BinaryRaster {
        width: r.width,
        height: r.height,
        pixels: r.pixels.iter().map(|&p| (p > t) as u8).collect(),
    }
}

fn validate_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidValue(format!(
            "raster dimensions must be positive, got {width}x{height}"
        )));
    }
    if width * height != len {
        return Err(Error::InvalidValue(format!(
            "{len} pixels do not fill {width}x{height}"
        )));
    }
    Ok(())
}
