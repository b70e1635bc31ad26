// SPDX-License-Identifier: Apache-2.0

//! Training objectives for the forward model and the mask corrector.
//!
//! Discrete conventions:
//! - gradients are forward differences, zero on the last row/column;
//! - total variation is anisotropic (`|d/dx| + |d/dy|`) and, like the sums it
//!   is defined by, not normalized;
//! - the L1 terms on images, maps and masks are means over pixels (entries);
//! - the parameter regression term is the squared L2 norm;
//! - `sign(0) = 0` is the subgradient used at kinks.
//!
//! Every `*_grad` function returns the value together with its gradient and
//! works on raw row-major planes, which is what training uses.

use serde::{Deserialize, Serialize};

use crate::diffwarp::DeformationMap;
use crate::error::{check_dims, Error, Result};
use crate::faboracle::FabParam;
use crate::raster::{BinaryRaster, Raster};

/// Weights of reconstruction, total variation, smoothness, shrinkage and
/// parameter regression, in that order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rec: f64,
    pub var: f64,
    pub smooth: f64,
    pub reg: f64,
    pub par: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rec: 100.0,
            var: 0.001,
            smooth: 150.0,
            reg: 0.002,
            par: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rec, self.var, self.smooth, self.reg, self.par];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskLossWeights {
    pub io: f64,
    pub var: f64,
    pub smooth: f64,
}

impl Default for MaskLossWeights {
    fn default() -> Self {
        MaskLossWeights {
            io: 1.0,
            var: 1.0,
            smooth: 1.0,
        }
    }
}

impl MaskLossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.io, self.var, self.smooth];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(
                "mask loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LithoTerms {
    pub rec: f64,
    pub var: f64,
    pub smooth: f64,
    pub reg: f64,
    pub par: f64,
}

impl LithoTerms {
    pub fn as_array(&self) -> [f64; 5] {
        [self.rec, self.var, self.smooth, self.reg, self.par]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskTerms {
    pub io: f64,
    pub kvar: f64,
    pub ksmooth: f64,
}

impl MaskTerms {
    pub fn as_array(&self) -> [f64; 3] {
        [self.io, self.kvar, self.ksmooth]
    }
}

pub fn litho_total(t: &LithoTerms, w: &LossWeights) -> f64 {
    w.rec * t.rec + w.var * t.var + w.smooth * t.smooth + w.reg * t.reg + w.par * t.par
}

pub fn opc_total(t: &MaskTerms, w: &MaskLossWeights) -> f64 {
    w.io * t.io + w.var * t.kvar + w.smooth * t.ksmooth
}

/// Edge-aware smoothness weights `exp(-(|grad S| + |grad I|))`, in `(0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeightMap {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl EdgeWeightMap {
    pub fn new(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != width * height {
            return Err(Error::InvalidValue("edge weight count mismatch".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) {
            return Err(Error::InvalidValue("edge weights must lie in (0, 1]".into()));
        }
        Ok(EdgeWeightMap { width, height, weights })
    }

    /// All-ones weights.
    pub fn uniform(width: usize, height: usize) -> Self {
        EdgeWeightMap {
            width,
            height,
            weights: vec![1.0; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// L1 norm of the forward-difference gradient at each pixel.
pub fn gradient_l1(p: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                out[i] += (p[i + 1] - p[i]).abs();
            }
            if y + 1 < h {
                out[i] += (p[i + w] - p[i]).abs();
            }
        }
    }
    out
}

pub fn edge_weights(s: &BinaryRaster, i: &Raster) -> Result<EdgeWeightMap> {
    check_dims(s.dims(), i.dims())?;
    let (w, h) = i.dims();
    let gs = gradient_l1(s.to_raster().pixels(), w, h);
    let gi = gradient_l1(i.pixels(), w, h);
    Ok(EdgeWeightMap {
        width: w,
        height: h,
        weights: gs.iter().zip(&gi).map(|(a, b)| (-(a + b)).exp()).collect(),
    })
}

/// Value and gradients of a two-image loss with respect to both images.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGrad {
    pub value: f64,
    pub wrt_a: Vec<f64>,
    pub wrt_b: Vec<f64>,
}

/// `mean |a - b|`.
pub fn mean_abs_grad(a: &[f64], b: &[f64]) -> PairGrad {
    let n = a.len() as f64;
    let mut value = 0.0;
    let mut wrt_a = Vec::with_capacity(a.len());
    for (p, q) in a.iter().zip(b) {
        let d = p - q;
        value += d.abs();
        wrt_a.push(sign(d) / n);
    }
    let wrt_b = wrt_a.iter().map(|g| -g).collect();
    PairGrad {
        value: value / n,
        wrt_a,
        wrt_b,
    }
}

/// Anisotropic total variation of the signed difference `a - b`.
pub fn tv_diff_grad(a: &[f64], b: &[f64], w: usize, h: usize) -> PairGrad {
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    let mut value = 0.0;
    let mut gd = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                let t = d[i + 1] - d[i];
                value += t.abs();
                gd[i + 1] += sign(t);
                gd[i] -= sign(t);
            }
            if y + 1 < h {
                let t = d[i + w] - d[i];
                value += t.abs();
                gd[i + w] += sign(t);
                gd[i] -= sign(t);
            }
        }
    }
    let wrt_b = gd.iter().map(|g| -g).collect();
    PairGrad {
        value,
        wrt_a: gd,
        wrt_b,
    }
}

/// Value and gradient of a loss on a deformation map.
#[derive(Clone, Debug, PartialEq)]
pub struct MapGrad {
    pub value: f64,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

/// Edge-weighted L1 of the map's forward differences, divided by the pixel count.
pub fn smooth_grad(m: &DeformationMap, weights: &EdgeWeightMap) -> MapGrad {
    let (w, h) = m.dims();
    let n = (w * h) as f64;
    let wt = weights.weights();
    let mut value = 0.0;
    let mut grads = [vec![0.0; w * h], vec![0.0; w * h]];
    for (plane, g) in [m.dx(), m.dy()].into_iter().zip(grads.iter_mut()) {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                for j in [(x + 1 < w).then_some(i + 1), (y + 1 < h).then_some(i + w)]
                    .into_iter()
                    .flatten()
                {
                    let t = plane[j] - plane[i];
                    value += t.abs() * wt[i];
                    let s = sign(t) * wt[i] / n;
                    g[j] += s;
                    g[i] -= s;
                }
            }
        }
    }
    let [dx, dy] = grads;
    MapGrad {
        value: value / n,
        dx,
        dy,
    }
}

/// Mean absolute displacement over both channels.
pub fn reg_grad(m: &DeformationMap) -> MapGrad {
    let k = 2.0 * m.len() as f64;
    let value = m.dx().iter().chain(m.dy()).map(|v| v.abs()).sum::<f64>() / k;
    MapGrad {
        value,
        dx: m.dx().iter().map(|v| sign(*v) / k).collect(),
        dy: m.dy().iter().map(|v| sign(*v) / k).collect(),
    }
}

/// Mean L1 gradient magnitude of a mask; returns the value and its gradient.
pub fn ksmooth_grad(k: &[f64], w: usize, h: usize) -> (f64, Vec<f64>) {
    let n = (w * h) as f64;
    let mut value = 0.0;
    let mut g = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for j in [(x + 1 < w).then_some(i + 1), (y + 1 < h).then_some(i + w)]
                .into_iter()
                .flatten()
            {
                let t = k[j] - k[i];
                value += t.abs();
                g[j] += sign(t) / n;
                g[i] -= sign(t) / n;
            }
        }
    }
    (value / n, g)
}

/// Squared L2 distance between a parameter estimate and its target;
/// returns the value and the gradient with respect to the estimate.
pub fn par_grad(estimate: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut g = Vec::with_capacity(estimate.len());
    for (e, t) in estimate.iter().zip(target) {
        value += (e - t) * (e - t);
        g.push(2.0 * (e - t));
    }
    (value, g)
}

pub fn l_rec(i: &Raster, j: &Raster) -> Result<f64> {
    i.check_same_dims(j)?;
    Ok(mean_abs_grad(i.pixels(), j.pixels()).value)
}

pub fn l_var(i: &Raster, j: &Raster) -> Result<f64> {
    i.check_same_dims(j)?;
    Ok(tv_diff_grad(i.pixels(), j.pixels(), i.width(), i.height()).value)
}

pub fn l_smooth(m: &DeformationMap, w: &EdgeWeightMap) -> Result<f64> {
    check_dims(m.dims(), w.dims())?;
    Ok(smooth_grad(m, w).value)
}

pub fn l_reg(m: &DeformationMap) -> f64 {
    reg_grad(m).value
}

fn check_param_dims(estimate: &[f64], target: &FabParam) -> Result<()> {
    if estimate.len() != target.dim() {
        return Err(Error::InvalidValue(format!(
            "parameter estimate has {} components, target has {}",
            estimate.len(),
            target.dim()
        )));
    }
    Ok(())
}

/// Regression loss of the parameter estimate made on a generated image.
pub fn l_par_generator(estimate: &[f64], y0: &FabParam) -> Result<f64> {
    check_param_dims(estimate, y0)?;
    Ok(par_grad(estimate, y0.components()).0)
}

/// Regression loss of the parameter estimate made on a ground-truth image.
pub fn l_par_discriminator(estimate: &[f64], yi: &FabParam) -> Result<f64> {
    check_param_dims(estimate, yi)?;
    Ok(par_grad(estimate, yi.components()).0)
}

pub fn l_io(s: &Raster, j: &Raster) -> Result<f64> {
    l_rec(s, j)
}

pub fn l_kvar(s: &Raster, j: &Raster) -> Result<f64> {
    l_var(s, j)
}

pub fn l_ksmooth(k: &Raster) -> f64 {
    ksmooth_grad(k.pixels(), k.width(), k.height()).0
}
