// SPDX-License-Identifier: Apache-2.0

//! Differentiable building blocks. Every `forward` returns the output and
//! whatever its `backward` needs; `backward` accumulates parameter gradients
//! when a gradient store is supplied and returns the input gradient.

use super::params::{Init, LayoutBuilder, ParamId, ParamStore};
use super::{Scalar, Tensor};

/// Square convolution with zero padding `k / 2`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

pub struct ConvCache<T> {
    /// im2col matrix `[cin * k * k, ho * wo]`, or the input itself for 1x1.
    cols: Vec<T>,
    h: usize,
    w: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut LayoutBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        zero_init: bool,
    ) -> Self {
        let fan_in = cin * k * k;
        let init = if zero_init { Init::Zeros } else { Init::He { fan_in } };
        let weight = b.add(format!("{name}.weight"), vec![cout, cin, k, k], init);
        let bias = bias.then(|| b.add(format!("{name}.bias"), vec![cout], Init::Zeros));
        Conv2d {
            cin,
            cout,
            k,
            stride,
            weight,
            bias,
        }
    }

    fn out_dim(&self, n: usize) -> usize {
        (n + 2 * (self.k / 2) - self.k) / self.stride + 1
    }

    fn direct(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn im2col<T: Scalar>(&self, x: &Tensor<T>, ho: usize, wo: usize) -> Vec<T> {
        let (k, s, pad) = (self.k, self.stride, (self.k / 2) as isize);
        let n = ho * wo;
        let mut cols = vec![T::zero(); self.cin * k * k * n];
        for ci in 0..self.cin {
            let plane = x.channel(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * n..][..n];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - pad;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..][..x.w];
                        let dst = &mut row[oy * wo..][..wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - pad;
                            if ix >= 0 && ix < x.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize) -> Tensor<T> {
        let (k, s, pad) = (self.k, self.stride, (self.k / 2) as isize);
        let n = ho * wo;
        let mut g = Tensor::zeros(self.cin, h, w);
        for ci in 0..self.cin {
            let plane = &mut g.data[ci * h * w..][..h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * n..][..n];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..][..w];
                        for (ox, v) in row[oy * wo..][..wo].iter().enumerate() {
                            let ix = (ox * s + kx) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + *v;
                            }
                        }
                    }
                }
            }
        }
        g
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        assert_eq!(x.c, self.cin, "convolution input channels");
        let (ho, wo) = (self.out_dim(x.h), self.out_dim(x.w));
        let n = ho * wo;
        let kk = self.cin * self.k * self.k;
        let cols = if self.direct() {
            x.data.clone()
        } else {
            self.im2col(x, ho, wo)
        };
        let mut y = Tensor::zeros(self.cout, ho, wo);
        T::gemm(
            self.cout,
            kk,
            n,
            T::one(),
            p.get(self.weight),
            kk as isize,
            1,
            &cols,
            n as isize,
            1,
            T::zero(),
            &mut y.data,
            n as isize,
            1,
        );
        if let Some(b) = self.bias {
            for (co, bv) in p.get(b).iter().enumerate() {
                y.data[co * n..(co + 1) * n].iter_mut().for_each(|v| *v = *v + *bv);
            }
        }
        (y, ConvCache { cols, h: x.h, w: x.w })
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &ConvCache<T>,
        gy: &Tensor<T>,
        grads: Option<&mut ParamStore<T>>,
    ) -> Tensor<T> {
        let n = gy.h * gy.w;
        let kk = self.cin * self.k * self.k;
        if let Some(g) = grads {
            T::gemm(
                self.cout,
                n,
                kk,
                T::one(),
                &gy.data,
                n as isize,
                1,
                &cache.cols,
                1,
                n as isize,
                T::one(),
                g.get_mut(self.weight),
                kk as isize,
                1,
            );
            if let Some(b) = self.bias {
                let gb = g.get_mut(b);
                for (co, v) in gb.iter_mut().enumerate() {
                    *v = *v + gy.data[co * n..(co + 1) * n].iter().copied().sum::<T>();
                }
            }
        }
        let mut dcols = vec![T::zero(); kk * n];
        T::gemm(
            kk,
            self.cout,
            n,
            T::one(),
            p.get(self.weight),
            1,
            kk as isize,
            &gy.data,
            n as isize,
            1,
            T::zero(),
            &mut dcols,
            n as isize,
            1,
        );
        if self.direct() {
            Tensor::from_vec(self.cin, cache.h, cache.w, dcols)
        } else {
            self.col2im(&dcols, cache.h, cache.w, gy.h, gy.w)
        }
    }
}

pub const NORM_EPS: f64 = 1e-5;

/// Per-sample, per-channel normalization with a learned affine map.
#[derive(Clone, Debug)]
pub struct InstanceNorm {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl InstanceNorm {
    pub fn new(b: &mut LayoutBuilder, name: &str, channels: usize) -> Self {
        InstanceNorm {
            channels,
            gamma: b.add(format!("{name}.gamma"), vec![channels], Init::Ones),
            beta: b.add(format!("{name}.beta"), vec![channels], Init::Zeros),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
        let n = x.plane_len();
        let nt = T::of(n as f64);
        let (gamma, beta) = (p.get(self.gamma), p.get(self.beta));
        let mut y = Tensor::zeros(x.c, x.h, x.w);
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut inv_std = Vec::with_capacity(x.c);
        for c in 0..x.c {
            let src = x.channel(c);
            let mean = src.iter().copied().sum::<T>() / nt;
            let var = src.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / nt;
            let is = T::one() / (var + T::of(NORM_EPS)).sqrt();
            inv_std.push(is);
            for i in 0..n {
                let xh = (src[i] - mean) * is;
                xhat[c * n + i] = xh;
                y.data[c * n + i] = gamma[c] * xh + beta[c];
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &NormCache<T>,
        gy: &Tensor<T>,
        grads: Option<&mut ParamStore<T>>,
    ) -> Tensor<T> {
        let n = gy.plane_len();
        let nt = T::of(n as f64);
        let gamma = p.get(self.gamma);
        let mut gx = Tensor::zeros(gy.c, gy.h, gy.w);
        let mut dgamma = vec![T::zero(); gy.c];
        let mut dbeta = vec![T::zero(); gy.c];
        for c in 0..gy.c {
            let g = gy.channel(c);
            let xh = &cache.xhat[c * n..(c + 1) * n];
            let sum_g = g.iter().copied().sum::<T>();
            let sum_gx = g.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>();
            dgamma[c] = sum_gx;
            dbeta[c] = sum_g;
            let k = gamma[c] * cache.inv_std[c] / nt;
            for i in 0..n {
                gx.data[c * n + i] = k * (nt * g[i] - sum_g - xh[i] * sum_gx);
            }
        }
        if let Some(gs) = grads {
            for (a, b) in gs.get_mut(self.gamma).iter_mut().zip(&dgamma) {
                *a = *a + *b;
            }
            for (a, b) in gs.get_mut(self.beta).iter_mut().zip(&dbeta) {
                *a = *a + *b;
            }
        }
        gx
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `x * sigmoid(x)`; the cache is the pre-activation.
pub fn silu_forward<T: Scalar>(x: Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = *v * sigmoid(*v));
    (y, x)
}

pub fn silu_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = gy.clone();
    for (g, v) in gx.data.iter_mut().zip(&x.data) {
        let s = sigmoid(*v);
        *g = *g * s * (T::one() + *v * (T::one() - s));
    }
    gx
}

/// 2x2 average pooling; spatial sizes must be even.
pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    assert!(
        x.h.is_multiple_of(2) && x.w.is_multiple_of(2),
        "pooling needs even spatial size"
    );
    let (h, w) = (x.h / 2, x.w / 2);
    let q = T::of(0.25);
    let mut y = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = x.channel(c);
        for oy in 0..h {
            for ox in 0..w {
                let i = 2 * oy * x.w + 2 * ox;
                y.data[(c * h + oy) * w + ox] = q * (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]);
            }
        }
    }
    y
}

pub fn avg_pool2_backward<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (gy.h * 2, gy.w * 2);
    let q = T::of(0.25);
    let mut gx = Tensor::zeros(gy.c, h, w);
    for c in 0..gy.c {
        for y in 0..h {
            for x in 0..w {
                gx.data[(c * h + y) * w + x] = q * gy.data[(c * gy.h + y / 2) * gy.w + x / 2];
            }
        }
    }
    gx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut y = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        for yy in 0..h {
            for xx in 0..w {
                y.data[(c * h + yy) * w + xx] = x.data[(c * x.h + yy / 2) * x.w + xx / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (gy.h / 2, gy.w / 2);
    let mut gx = Tensor::zeros(gy.c, h, w);
    for c in 0..gy.c {
        for y in 0..gy.h {
            for x in 0..gy.w {
                let d = &mut gx.data[(c * h + y / 2) * w + x / 2];
                *d = *d + gy.data[(c * gy.h + y) * gy.w + x];
            }
        }
    }
    gx
}

/// Conv -> instance norm -> SiLU, twice.
///
/// Blocks whose input carries constant conditioning planes skip the first
/// normalization: it would subtract exactly the per-channel constant those
/// planes contribute. Their first convolution gets a bias instead, and the
/// planes act by shifting the first SiLU's operating point.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    conv1: Conv2d,
    norm1: Option<InstanceNorm>,
    conv2: Conv2d,
    norm2: InstanceNorm,
}

pub struct BlockCache<T> {
    c1: ConvCache<T>,
    n1: Option<NormCache<T>>,
    a1: Tensor<T>,
    c2: ConvCache<T>,
    n2: NormCache<T>,
    a2: Tensor<T>,
}

impl ConvBlock {
    pub fn new(b: &mut LayoutBuilder, name: &str, cin: usize, cout: usize) -> Self {
        Self::build(b, name, cin, cout, false)
    }

    pub fn conditioned(b: &mut LayoutBuilder, name: &str, cin: usize, cout: usize) -> Self {
        Self::build(b, name, cin, cout, true)
    }

    fn build(b: &mut LayoutBuilder, name: &str, cin: usize, cout: usize, conditioned: bool) -> Self {
        // biases ahead of a normalization would be cancelled by it
        ConvBlock {
            conv1: Conv2d::new(b, &format!("{name}.conv1"), cin, cout, 3, 1, conditioned, false),
            norm1: (!conditioned).then(|| InstanceNorm::new(b, &format!("{name}.norm1"), cout)),
            conv2: Conv2d::new(b, &format!("{name}.conv2"), cout, cout, 3, 1, false, false),
            norm2: InstanceNorm::new(b, &format!("{name}.norm2"), cout),
        }
    }

    pub fn cout(&self) -> usize {
        self.conv2.cout
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> (Tensor<T>, BlockCache<T>) {
        let (h, c1) = self.conv1.forward(p, x);
        let (h, n1) = match &self.norm1 {
            Some(norm) => {
                let (h, c) = norm.forward(p, &h);
                (h, Some(c))
            }
            None => (h, None),
        };
        let (h, a1) = silu_forward(h);
        let (h, c2) = self.conv2.forward(p, &h);
        let (h, n2) = self.norm2.forward(p, &h);
        let (h, a2) = silu_forward(h);
        (h, BlockCache { c1, n1, a1, c2, n2, a2 })
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &BlockCache<T>,
        gy: &Tensor<T>,
        mut grads: Option<&mut ParamStore<T>>,
    ) -> Tensor<T> {
        let g = silu_backward(&cache.a2, gy);
        let g = self.norm2.backward(p, &cache.n2, &g, grads.as_deref_mut());
        let g = self.conv2.backward(p, &cache.c2, &g, grads.as_deref_mut());
        let mut g = silu_backward(&cache.a1, &g);
        if let (Some(norm), Some(c)) = (&self.norm1, &cache.n1) {
            g = norm.backward(p, c, &g, grads.as_deref_mut());
        }
        self.conv1.backward(p, &cache.c1, &g, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Direct-loop convolution used as an independent reference.
    fn naive_conv(conv: &Conv2d, p: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let pad = (conv.k / 2) as isize;
        let (ho, wo) = (conv.out_dim(x.h), conv.out_dim(x.w));
        let wt = p.get(conv.weight);
        let mut y = Tensor::zeros(conv.cout, ho, wo);
        for co in 0..conv.cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = conv.bias.map_or(0.0, |b| p.get(b)[co]);
                    for ci in 0..conv.cin {
                        for ky in 0..conv.k {
                            for kx in 0..conv.k {
                                let iy = (oy * conv.stride + ky) as isize - pad;
                                let ix = (ox * conv.stride + kx) as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    acc += wt[((co * conv.cin + ci) * conv.k + ky) * conv.k + kx]
                                        * x.data[(ci * x.h + iy as usize) * x.w + ix as usize];
                                }
                            }
                        }
                    }
                    y.data[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, stride, h, w) in [(3, 1, 5, 7), (3, 2, 6, 8), (3, 2, 5, 5), (1, 1, 4, 3)] {
            let mut b = LayoutBuilder::default();
            let conv = Conv2d::new(&mut b, "c", 3, 4, k, stride, true, false);
            let mut p = ParamStore::<f64>::init(&b.finish(), &mut rng);
            p.get_mut(conv.bias.unwrap())
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-1.0..1.0));
            let x = rand_tensor(&mut rng, 3, h, w);
            let (y, _) = conv.forward(&p, &x);
            let r = naive_conv(&conv, &p, &x);
            assert_eq!(y.shape(), r.shape());
            for (a, b) in y.data.iter().zip(&r.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Gradient of `sum(r * f(x))` by central differences.
    fn numeric_input_grad(f: &dyn Fn(&Tensor<f64>) -> Tensor<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> Vec<f64> {
        let h = 1e-6;
        (0..x.data.len())
            .map(|i| {
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                let fp: f64 = f(&xp).data.iter().zip(&r.data).map(|(a, b)| a * b).sum();
                let fm: f64 = f(&xm).data.iter().zip(&r.data).map(|(a, b)| a * b).sum();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64]) {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!(
                (x - y).abs() <= 1e-6 * (1.0 + x.abs().max(y.abs())),
                "entry {i}: {x} vs {y}"
            );
        }
    }

    #[test]
    fn layer_input_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, 2, 4, 6);

        let r = rand_tensor(&mut rng, 2, 4, 6);
        let (_, cache) = silu_forward(x.clone());
        assert_close(
            &silu_backward(&cache, &r).data,
            &numeric_input_grad(&|t| silu_forward(t.clone()).0, &x, &r),
        );

        let r = rand_tensor(&mut rng, 2, 2, 3);
        assert_close(
            &avg_pool2_backward(&r).data,
            &numeric_input_grad(&|t| avg_pool2(t), &x, &r),
        );

        let r = rand_tensor(&mut rng, 2, 8, 12);
        assert_close(
            &upsample2_backward(&r).data,
            &numeric_input_grad(&|t| upsample2(t), &x, &r),
        );

        let mut b = LayoutBuilder::default();
        let norm = InstanceNorm::new(&mut b, "n", 2);
        let conv = Conv2d::new(&mut b, "c", 2, 3, 3, 2, true, false);
        let mut p = ParamStore::<f64>::init(&b.finish(), &mut rng);
        p.get_mut(norm.gamma).copy_from_slice(&[0.7, -1.3]);

        let r = rand_tensor(&mut rng, 2, 4, 6);
        let (_, nc) = norm.forward(&p, &x);
        assert_close(
            &norm.backward(&p, &nc, &r, None).data,
            &numeric_input_grad(&|t| norm.forward(&p, t).0, &x, &r),
        );

        let r = rand_tensor(&mut rng, 3, 2, 3);
        let (_, cc) = conv.forward(&p, &x);
        assert_close(
            &conv.backward(&p, &cc, &r, None).data,
            &numeric_input_grad(&|t| conv.forward(&p, t).0, &x, &r),
        );
    }

    #[test]
    fn f32_and_f64_blocks_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut b = LayoutBuilder::default();
        let block = ConvBlock::new(&mut b, "b", 2, 4);
        let p = ParamStore::<f64>::init(&b.finish(), &mut rng);
        let x = rand_tensor(&mut rng, 2, 8, 8);
        let (y64, _) = block.forward(&p, &x);
        let (y32, _) = block.forward(&p.cast::<f32>(), &x.cast::<f32>());
        for (a, b) in y64.data.iter().zip(&y32.data) {
            assert!((a - *b as f64).abs() < 1e-4);
        }
    }
}
