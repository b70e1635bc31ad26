// SPDX-License-Identifier: Apache-2.0

//! Deterministic stand-in for lithography plus etch.
//!
//! A layout is blurred at two scales: a short-range blur that rounds corners
//! and a long-range density field that condenses lines in crowded regions.
//! The difference is thresholded at a level that falls linearly with the
//! fabrication parameter, so larger parameters print wider features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryRaster, Raster};

/// Parameter values used to build training data.
pub const PARAM_GRID: [f64; 7] = [-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9];

/// Normalized fabrication parameters, each component in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FabParam(Vec<f64>);

impl FabParam {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidValue("fabrication parameter has no components".into()));
        }
        if let Some(c) = components.iter().find(|c| !c.is_finite() || c.abs() > 1.0) {
            return Err(Error::InvalidValue(format!(
                "fabrication parameter component {c} outside [-1, 1]"
            )));
        }
        Ok(FabParam(components))
    }

    pub fn scalar(y: f64) -> Result<Self> {
        Self::new(vec![y])
    }

    /// The component that drives the oracle.
    pub fn primary(&self) -> f64 {
        self.0[0]
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for FabParam {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        FabParam::new(v)
    }
}

impl From<FabParam> for Vec<f64> {
    fn from(p: FabParam) -> Self {
        p.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub sigma_fine: f64,
    pub sigma_density: f64,
    pub alpha: f64,
    pub t0: f64,
    pub t1: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            sigma_fine: 1.0,
            sigma_density: 8.0,
            alpha: 0.25,
            t0: 0.56,
            t1: 0.12,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("oracle: {m}")));
        if !(self.sigma_fine > 0.0) {
            return bad("sigma_fine must be positive");
        }
        if !(self.sigma_density > self.sigma_fine) {
            return bad("sigma_density must exceed sigma_fine");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if !(self.t1 > 0.0) {
            return bad("t1 must be positive");
        }
        if !(self.t0 - self.t1 > 0.0 && self.t0 + self.t1 < 1.0) {
            return bad("threshold must stay inside (0, 1) over the parameter range");
        }
        Ok(())
    }
}

/// Printing threshold `t0 - t1 * y`; strictly decreasing in `y`.
pub fn threshold_for(y: &FabParam, cfg: &OracleConfig) -> f64 {
    cfg.t0 - cfg.t1 * y.primary()
}

/// Separable normalized Gaussian blur with radius `ceil(3 sigma)` and
/// edge-replicated borders.
///
/// # Panics
/// If `sigma` is not positive.
pub fn gaussian_blur(r: &Raster, sigma: f64) -> Raster {
    let out = blur_plane(r.pixels(), r.width(), r.height(), sigma);
    Raster::from_clamped(r.width(), r.height(), out).expect("dimensions preserved")
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive, got {sigma}");
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn blur_plane(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + k as isize - radius, w);
                acc += kv * src[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + k as isize - radius, h);
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// The continuous field `blur_fine - alpha * blur_density` that gets thresholded.
pub fn print_field(layout: &BinaryRaster, cfg: &OracleConfig) -> Vec<f64> {
    let src = layout.to_raster();
    let (w, h) = layout.dims();
    let fine = blur_plane(src.pixels(), w, h, cfg.sigma_fine);
    let density = blur_plane(src.pixels(), w, h, cfg.sigma_density);
    fine.iter().zip(&density).map(|(f, d)| f - cfg.alpha * d).collect()
}

/// Simulated fabricated shape of `layout` under parameter `y`.
///
/// Only the first parameter component is used; any further components are
/// accepted and ignored.
pub fn simulate(layout: &BinaryRaster, y: &FabParam, cfg: &OracleConfig) -> BinaryRaster {
    let t = threshold_for(y, cfg);
    let field = print_field(layout, cfg);
    let (w, h) = layout.dims();
    let pixels = field.into_iter().map(|v| (v > t) as u8).collect();
    BinaryRaster::new(w, h, pixels).expect("dimensions preserved")
}
