// SPDX-License-Identifier: Apache-2.0

//! IOU, SSIM and per-pixel error rate. All arithmetic is in `f64`.

use serde::{Deserialize, Serialize};

use super::{BinaryRaster, Raster};
use crate::error::{Error, Result};

/// Intersection over union of the foreground sets.
///
/// Two empty masks agree vacuously and score 1.0.
pub fn iou(a: &BinaryRaster, b: &BinaryRaster) -> Result<f64> {
    a.check_same_dims(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.pixels().iter().zip(b.pixels()) {
        inter += (p & q) as usize;
        union += (p | q) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Fraction of pixels where the masks disagree (normalized Hamming distance).
pub fn pixel_error_rate(a: &BinaryRaster, b: &BinaryRaster) -> Result<f64> {
    a.check_same_dims(b)?;
    let diff = a.pixels().iter().zip(b.pixels()).filter(|(p, q)| p != q).count();
    Ok(diff as f64 / a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}

/// Mean SSIM over every fully contained window position.
pub fn ssim_with(a: &Raster, b: &Raster, params: &SsimParams) -> Result<f64> {
    a.check_same_dims(b)?;
    let (w, h) = a.dims();
    let win = params.window;
    if w < win || h < win {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            window: win,
        });
    }
    let taps = params.taps();
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);

    let pa = a.pixels();
    let pb = b.pixels();
    let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(pa, w, h, &taps);
    let mu_b = filter_valid(pb, w, h, &taps);
    let e_aa = filter_valid(&aa, w, h, &taps);
    let e_bb = filter_valid(&bb, w, h, &taps);
    let e_ab = filter_valid(&ab, w, h, &taps);

    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Separable correlation keeping only fully covered positions.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(j, t)| t * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(w: usize, h: usize, on: &[(usize, usize)]) -> BinaryRaster {
        BinaryRaster::from_fn(w, h, |x, y| on.contains(&(x, y)))
    }

    #[test]
    fn iou_cases() {
        let a = mask(2, 2, &[(0, 0), (0, 1)]);
        let b = mask(2, 2, &[(0, 1), (1, 1)]);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &mask(2, 2, &[(1, 0)])).unwrap(), 0.0);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let empty = BinaryRaster::empty(2, 2);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
        assert!(iou(&a, &BinaryRaster::empty(3, 2)).is_err());
    }

    #[test]
    fn pixel_error_cases() {
        let a = mask(4, 4, &[(1, 1), (2, 2)]);
        let b = mask(4, 4, &[(1, 1)]);
        assert_eq!(pixel_error_rate(&a, &a).unwrap(), 0.0);
        assert_eq!(pixel_error_rate(&a, &b).unwrap(), 0.0625);
        let inv = BinaryRaster::from_fn(4, 4, |x, y| !a.get(x, y));
        assert_eq!(pixel_error_rate(&a, &inv).unwrap(), 1.0);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Raster::from_fn(16, 16, |_, _| 0.0).unwrap();
        let x = Raster::new(16, 16, x.pixels().iter().map(|_| rng.gen()).collect()).unwrap();
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let c = Raster::filled(12, 12, 0.5);
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ssim_errors() {
        let small = Raster::filled(10, 20, 0.5);
        assert!(matches!(ssim(&small, &small), Err(Error::TooSmall { .. })));
        assert!(ssim(&Raster::filled(12, 12, 0.5), &Raster::filled(13, 12, 0.5)).is_err());
    }

    /// Direct windowed evaluation with two-pass central moments.
    fn reference_ssim(a: &Raster, b: &Raster) -> f64 {
        let p = SsimParams::default();
        let k = p.window;
        let s = p.sigma;
        let mut g = vec![0.0; k * k];
        let r = (k / 2) as f64;
        for j in 0..k {
            for i in 0..k {
                let (dx, dy) = (i as f64 - r, j as f64 - r);
                g[j * k + i] = (-(dx * dx + dy * dy) / (2.0 * s * s)).exp();
            }
        }
        let gs: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= gs);
        let c1 = (0.01f64).powi(2);
        let c2 = (0.03f64).powi(2);
        let (w, h) = a.dims();
        let mut acc = 0.0;
        let mut count = 0;
        for oy in 0..=h - k {
            for ox in 0..=w - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for j in 0..k {
                    for i in 0..k {
                        ma += g[j * k + i] * a.get(ox + i, oy + j);
                        mb += g[j * k + i] * b.get(ox + i, oy + j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for j in 0..k {
                    for i in 0..k {
                        let da = a.get(ox + i, oy + j) - ma;
                        let db = b.get(ox + i, oy + j) - mb;
                        va += g[j * k + i] * da * da;
                        vb += g[j * k + i] * db * db;
                        cov += g[j * k + i] * da * db;
                    }
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_matches_direct_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let a = Raster::new(16, 16, (0..256).map(|_| rng.gen()).collect()).unwrap();
            let b = Raster::new(16, 16, (0..256).map(|_| rng.gen()).collect()).unwrap();
            let fast = ssim(&a, &b).unwrap();
            let slow = reference_ssim(&a, &b);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    fn bits(n: usize) -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(0u8..2, n)
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_exact(a in bits(36), b in bits(36)) {
            let a = BinaryRaster::new(6, 6, a).unwrap();
            let b = BinaryRaster::new(6, 6, b).unwrap();
            prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            if a.area() + b.area() > 0 {
                prop_assert_eq!(iou(&a, &b).unwrap() == 1.0, a == b);
            }
        }

        #[test]
        fn error_rate_is_hamming(a in bits(36), b in bits(36), c in bits(36)) {
            let a = BinaryRaster::new(6, 6, a).unwrap();
            let b = BinaryRaster::new(6, 6, b).unwrap();
            let c = BinaryRaster::new(6, 6, c).unwrap();
            let ab = pixel_error_rate(&a, &b).unwrap();
            prop_assert_eq!(ab, pixel_error_rate(&b, &a).unwrap());
            prop_assert!(ab <= pixel_error_rate(&a, &c).unwrap() + pixel_error_rate(&c, &b).unwrap() + 1e-15);
        }

        #[test]
        fn ssim_symmetric(a in proptest::collection::vec(0.0f64..=1.0, 144), b in proptest::collection::vec(0.0f64..=1.0, 144)) {
            let a = Raster::new(12, 12, a).unwrap();
            let b = Raster::new(12, 12, b).unwrap();
            let s = ssim(&a, &b).unwrap();
            prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        }
    }
}
