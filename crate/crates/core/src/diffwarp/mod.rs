// SPDX-License-Identifier: Apache-2.0

//! Dense deformation maps and differentiable bilinear backward warping.
//!
//! A [`DeformationMap`] stores, for every output pixel `(x, y)`, the offset
//! `(dx, dy)` of the source location it samples: `out(x, y) = src(x + dx, y + dy)`.
//! The zero map is the identity warp. Sample coordinates are clamped to the
//! image before interpolation.

mod io;
mod render;

pub use io::{load_map, save_map, MAP_MAGIC};
pub use render::{render_deformation, RenderOptions};

use crate::error::{check_dims, Error, Result};
use crate::raster::Raster;

#[derive(Clone, Debug, PartialEq)]
pub struct DeformationMap {
    width: usize,
    height: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl DeformationMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "empty deformation map");
        DeformationMap {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    /// Validates finiteness and the sanity bound `|dx| <= width`, `|dy| <= height`.
    pub fn new(width: usize, height: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if width == 0 || height == 0 || dx.len() != n || dy.len() != n {
            return Err(Error::InvalidValue(format!(
                "deformation planes of {} and {} values do not fill {width}x{height}",
                dx.len(),
                dy.len()
            )));
        }
        let wb = width as f64;
        let hb = height as f64;
        if let Some(v) = dx.iter().find(|v| !v.is_finite() || v.abs() > wb) {
            return Err(Error::InvalidValue(format!(
                "horizontal displacement {v} out of bounds"
            )));
        }
        if let Some(v) = dy.iter().find(|v| !v.is_finite() || v.abs() > hb) {
            return Err(Error::InvalidValue(format!("vertical displacement {v} out of bounds")));
        }
        Ok(DeformationMap { width, height, dx, dy })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Result<Self> {
        let mut dx = Vec::with_capacity(width * height);
        let mut dy = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                dx.push(a);
                dy.push(b);
            }
        }
        Self::new(width, height, dx, dy)
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
        self.dx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dx.is_empty()
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }
}

/// Lower lattice index and fractional weight along one axis after clamping.
/// Returns `(i0, frac, inside)`; `inside` is false when the coordinate was
/// clamped, in which case the coordinate derivative is zero.
///
/// The interpolation cell is `[i0, i0 + 1]` with `i0 = min(floor(c), n - 2)`,
/// so on lattice points the derivative is taken from the cell to the right,
/// except at the last index where the cell to the left is used.
#[inline]
fn axis(c: f64, n: usize) -> (usize, f64, bool) {
    let hi = (n - 1) as f64;
    let inside = (0.0..=hi).contains(&c);
    let c = c.clamp(0.0, hi);
    if n == 1 {
        return (0, 0.0, false);
    }
    let i0 = (c.floor() as usize).min(n - 2);
    (i0, c - i0 as f64, inside)
}

/// Interpolation cell of coordinate `c` on an axis of `n` samples and its
/// clamping side (-1 below, 0 inside, 1 above). Sampling is smooth in `c`
/// wherever this pair is locally constant.
pub(crate) fn cell_of(c: f64, n: usize) -> (usize, i8) {
    let side = if c < 0.0 {
        -1
    } else if c > (n - 1) as f64 {
        1
    } else {
        0
    };
    (axis(c, n).0, side)
}

/// Bilinear interpolation of `img` at a real-valued location.
///
/// Off the lattice this is the four-neighbor ceiling/floor weighting; on the
/// lattice it returns the pixel value exactly. Coordinates outside the image
/// are clamped to the border first.
pub fn bilinear_sample(img: &Raster, x: f64, y: f64) -> f64 {
    sample_plane(img.pixels(), img.width(), img.height(), x, y)
}

#[inline]
pub(crate) fn sample_plane(src: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let (x0, fx, _) = axis(x, w);
    let (y0, fy, _) = axis(y, h);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let top = (1.0 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
    let bottom = (1.0 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
    (1.0 - fy) * top + fy * bottom
}

/// Backward warp of `source` by `m`.
pub fn warp(source: &Raster, m: &DeformationMap) -> Result<Raster> {
    check_dims(source.dims(), m.dims())?;
    let out = warp_plane(source.pixels(), m);
    Raster::from_clamped(source.width(), source.height(), out)
}

/// Warps a raw plane; the result is a convex combination of source values.
pub fn warp_plane(src: &[f64], m: &DeformationMap) -> Vec<f64> {
    let (w, h) = m.dims();
    debug_assert_eq!(src.len(), w * h);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = y * w;
        let dxr = &m.dx[row..row + w];
        let dyr = &m.dy[row..row + w];
        for (x, o) in out[row..row + w].iter_mut().enumerate() {
            *o = sample_plane(src, w, h, x as f64 + dxr[x], y as f64 + dyr[x]);
        }
    }
    out
}

/// Gradients of `sum(upstream * warp(source, m))`.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpGrad {
    pub source: Vec<f64>,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

pub fn warp_gradients(source: &Raster, m: &DeformationMap, upstream: &[f64]) -> Result<WarpGrad> {
    check_dims(source.dims(), m.dims())?;
    if upstream.len() != source.len() {
        return Err(Error::InvalidValue(format!(
            "upstream gradient has {} values for {} pixels",
            upstream.len(),
            source.len()
        )));
    }
    Ok(warp_plane_backward(source.pixels(), m, upstream))
}

pub fn warp_plane_backward(src: &[f64], m: &DeformationMap, upstream: &[f64]) -> WarpGrad {
    let (w, h) = m.dims();
    let n = w * h;
    let mut g = WarpGrad {
        source: vec![0.0; n],
        dx: vec![0.0; n],
        dy: vec![0.0; n],
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let u = upstream[i];
            if u == 0.0 {
                continue;
            }
            let (x0, fx, in_x) = axis(x as f64 + m.dx[i], w);
            let (y0, fy, in_y) = axis(y as f64 + m.dy[i], h);
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let (a, b) = (y0 * w + x0, y0 * w + x1);
            let (c, d) = (y1 * w + x0, y1 * w + x1);
            g.source[a] += u * (1.0 - fx) * (1.0 - fy);
            g.source[b] += u * fx * (1.0 - fy);
            g.source[c] += u * (1.0 - fx) * fy;
            g.source[d] += u * fx * fy;
            if in_x {
                g.dx[i] = u * ((1.0 - fy) * (src[b] - src[a]) + fy * (src[d] - src[c]));
            }
            if in_y {
                g.dy[i] = u * ((1.0 - fx) * (src[c] - src[a]) + fx * (src[d] - src[b]));
            }
        }
    }
    g
}
