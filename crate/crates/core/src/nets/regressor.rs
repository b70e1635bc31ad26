// SPDX-License-Identifier: Apache-2.0

//! Strided convolutional regressor that estimates fabrication parameters
//! from an image.

use serde::{Deserialize, Serialize};

use super::layers::{silu_backward, silu_forward, Conv2d, ConvCache};
use super::params::{Init, LayoutBuilder, ParamId, ParamSpec, ParamStore};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub param_dim: usize,
    /// Number of stride-2 convolutions.
    pub levels: usize,
    pub base_channels: usize,
}

impl RegressorConfig {
    pub fn new(param_dim: usize) -> Self {
        RegressorConfig {
            param_dim,
            levels: 4,
            base_channels: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.param_dim == 0 || self.levels == 0 || self.base_channels == 0 {
            return Err(Error::Config("regressor sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Regressor {
    cfg: RegressorConfig,
    specs: Vec<ParamSpec>,
    convs: Vec<Conv2d>,
    head_w: ParamId,
    head_b: ParamId,
}

pub struct RegressorCache<T> {
    h: usize,
    w: usize,
    convs: Vec<ConvCache<T>>,
    pre: Vec<Tensor<T>>,
    pooled: Vec<T>,
    last: (usize, usize, usize),
}

impl Regressor {
    pub fn new(cfg: RegressorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut b = LayoutBuilder::default();
        let mut cin = 1;
        let mut convs = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let cout = cfg.base_channels << l;
            convs.push(Conv2d::new(&mut b, &format!("conv{l}"), cin, cout, 3, 2, true, false));
            cin = cout;
        }
        let head_w = b.add("head.weight".into(), vec![cfg.param_dim, cin], Init::Zeros);
        let head_b = b.add("head.bias".into(), vec![cfg.param_dim], Init::Zeros);
        Ok(Regressor {
            cfg,
            specs: b.finish(),
            convs,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.cfg
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn check<T: Scalar>(&self, p: &ParamStore<T>, h: usize, w: usize) -> Result<()> {
        if p.specs() != self.specs.as_slice() {
            return Err(Error::Config(
                "parameters do not match the regressor architecture".into(),
            ));
        }
        if h == 0 || w == 0 {
            return Err(Error::InvalidValue("empty regressor input".into()));
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, img: &[T], h: usize, w: usize) -> (Vec<T>, RegressorCache<T>) {
        assert_eq!(img.len(), h * w, "input plane size");
        let mut x = Tensor::from_vec(1, h, w, img.to_vec());
        let mut convs = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (z, c) = conv.forward(p, &x);
            convs.push(c);
            let (a, z) = silu_forward(z);
            pre.push(z);
            x = a;
        }
        let n = T::of(x.plane_len() as f64);
        let pooled: Vec<T> = (0..x.c).map(|c| x.channel(c).iter().copied().sum::<T>() / n).collect();
        let (wt, bias) = (p.get(self.head_w), p.get(self.head_b));
        let est = (0..self.cfg.param_dim)
            .map(|j| {
                bias[j]
                    + wt[j * x.c..(j + 1) * x.c]
                        .iter()
                        .zip(&pooled)
                        .map(|(a, b)| *a * *b)
                        .sum::<T>()
            })
            .collect();
        let cache = RegressorCache {
            h,
            w,
            convs,
            pre,
            pooled,
            last: x.shape(),
        };
        (est, cache)
    }

    /// Returns the gradient with respect to the input image.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &RegressorCache<T>,
        g_est: &[T],
        mut grads: Option<&mut ParamStore<T>>,
    ) -> Vec<T> {
        let (c, h, w) = cache.last;
        let wt = p.get(self.head_w);
        if let Some(g) = grads.as_deref_mut() {
            let gw = g.get_mut(self.head_w);
            for (j, ge) in g_est.iter().enumerate() {
                for (k, pv) in cache.pooled.iter().enumerate() {
                    gw[j * c + k] = gw[j * c + k] + *ge * *pv;
                }
            }
            let gb = g.get_mut(self.head_b);
            for (j, ge) in g_est.iter().enumerate() {
                gb[j] = gb[j] + *ge;
            }
        }
        let n = T::of((h * w) as f64);
        let mut gx = Tensor::zeros(c, h, w);
        for k in 0..c {
            let gp: T = g_est.iter().enumerate().map(|(j, ge)| *ge * wt[j * c + k]).sum::<T>() / n;
            gx.data[k * h * w..(k + 1) * h * w].iter_mut().for_each(|v| *v = gp);
        }
        for l in (0..self.convs.len()).rev() {
            let gz = silu_backward(&cache.pre[l], &gx);
            gx = self.convs[l].backward(p, &cache.convs[l], &gz, grads.as_deref_mut());
        }
        debug_assert_eq!(gx.data.len(), cache.h * cache.w);
        gx.data
    }
}
