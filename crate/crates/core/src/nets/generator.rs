// SPDX-License-Identifier: Apache-2.0

//! Encoder-decoder with skip connections, shared by the deformation model
//! and the mask generator.

use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool2, avg_pool2_backward, sigmoid, upsample2, upsample2_backward, BlockCache, Conv2d, ConvBlock, ConvCache,
};
use super::params::{LayoutBuilder, ParamSpec, ParamStore};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Head {
    /// Two channels `(dx, dy)` squashed to `d_max * tanh`.
    Deformation { d_max: f64 },
    /// One channel squashed to `[0, 1]` by a sigmoid.
    Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Number of conditioning parameters; each becomes a constant input
    /// channel and is tiled again at the bottleneck.
    pub param_dim: usize,
    pub head: Head,
    pub depth: usize,
    pub base_channels: usize,
}

impl GeneratorConfig {
    pub fn lithonet(param_dim: usize) -> Self {
        GeneratorConfig {
            param_dim,
            head: Head::Deformation { d_max: 8.0 },
            depth: 4,
            base_channels: 16,
        }
    }

    pub fn opcnet() -> Self {
        GeneratorConfig {
            param_dim: 0,
            head: Head::Mask,
            depth: 4,
            base_channels: 16,
        }
    }

    pub fn input_channels(&self) -> usize {
        1 + self.param_dim
    }

    pub fn output_channels(&self) -> usize {
        match self.head {
            Head::Deformation { .. } => 2,
            Head::Mask => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(Error::Config("generator depth and width must be positive".into()));
        }
        if let Head::Deformation { d_max } = self.head {
            if !(d_max > 0.0 && d_max.is_finite()) {
                return Err(Error::Config("deformation bound must be positive".into()));
            }
            if self.param_dim == 0 {
                return Err(Error::Config("deformation model needs at least one parameter".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    specs: Vec<ParamSpec>,
    enc: Vec<ConvBlock>,
    mid: ConvBlock,
    dec: Vec<ConvBlock>,
    head: Conv2d,
}

pub struct GeneratorCache<T> {
    h: usize,
    w: usize,
    enc: Vec<BlockCache<T>>,
    mid: BlockCache<T>,
    dec: Vec<BlockCache<T>>,
    head: ConvCache<T>,
    out: Tensor<T>,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let ch = |l: usize| cfg.base_channels << l;
        let mut b = LayoutBuilder::default();
        let mut enc = Vec::with_capacity(cfg.depth);
        let mut cin = cfg.input_channels();
        let block = |b: &mut LayoutBuilder, name: &str, cin: usize, cout: usize, gets_params: bool| {
            if gets_params && cfg.param_dim > 0 {
                ConvBlock::conditioned(b, name, cin, cout)
            } else {
                ConvBlock::new(b, name, cin, cout)
            }
        };
        for l in 0..cfg.depth {
            enc.push(block(&mut b, &format!("enc{l}"), cin, ch(l), l == 0));
            cin = ch(l);
        }
        let mid = block(&mut b, "mid", cin + cfg.param_dim, ch(cfg.depth), true);
        // decoder blocks are registered deepest first, matching execution order
        let mut dec_rev = Vec::with_capacity(cfg.depth);
        let mut below = ch(cfg.depth);
        for l in (0..cfg.depth).rev() {
            dec_rev.push(ConvBlock::new(&mut b, &format!("dec{l}"), below + ch(l), ch(l)));
            below = ch(l);
        }
        dec_rev.reverse();
        let head = Conv2d::new(&mut b, "head", ch(0), cfg.output_channels(), 1, 1, true, true);
        Ok(Generator {
            cfg,
            specs: b.finish(),
            enc,
            mid,
            dec: dec_rev,
            head,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// Checks that parameters, grid and conditioning fit this architecture.
    pub fn check<T: Scalar>(&self, p: &ParamStore<T>, h: usize, w: usize, param_len: usize) -> Result<()> {
        if p.specs() != self.specs.as_slice() {
            return Err(Error::Config(
                "parameters do not match the generator architecture".into(),
            ));
        }
        let m = 1usize << self.cfg.depth;
        if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::InvalidValue(format!(
                "grid {w}x{h} is not divisible by {m} (depth {})",
                self.cfg.depth
            )));
        }
        if param_len != self.cfg.param_dim {
            return Err(Error::InvalidValue(format!(
                "generator expects {} parameters, got {param_len}",
                self.cfg.param_dim
            )));
        }
        Ok(())
    }

    /// Runs the network on a `h x w` input plane. The output is already
    /// squashed by the head activation.
    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        s: &[T],
        h: usize,
        w: usize,
        y: &[T],
    ) -> (Tensor<T>, GeneratorCache<T>) {
        assert_eq!(s.len(), h * w, "input plane size");
        let mut x = Tensor::concat(&[&Tensor::from_vec(1, h, w, s.to_vec()), &Tensor::planes(y, h, w)]);
        let mut enc_caches = Vec::with_capacity(self.cfg.depth);
        let mut skips = Vec::with_capacity(self.cfg.depth);
        for block in &self.enc {
            let (out, c) = block.forward(p, &x);
            enc_caches.push(c);
            x = avg_pool2(&out);
            skips.push(out);
        }
        if !y.is_empty() {
            x = Tensor::concat(&[&x, &Tensor::planes(y, x.h, x.w)]);
        }
        let (mut x, mid) = self.mid.forward(p, &x);
        let mut dec_caches = Vec::with_capacity(self.cfg.depth);
        for l in (0..self.cfg.depth).rev() {
            let up = upsample2(&x);
            let (out, c) = self.dec[l].forward(p, &Tensor::concat(&[&up, &skips[l]]));
            dec_caches.push(c);
            x = out;
        }
        dec_caches.reverse();
        let (mut out, head) = self.head.forward(p, &x);
        match self.cfg.head {
            Head::Deformation { d_max } => {
                let d = T::of(d_max);
                out.data.iter_mut().for_each(|v| *v = d * v.tanh());
            }
            Head::Mask => out.data.iter_mut().for_each(|v| *v = sigmoid(*v)),
        }
        let cache = GeneratorCache {
            h,
            w,
            enc: enc_caches,
            mid,
            dec: dec_caches,
            head,
            out: out.clone(),
        };
        (out, cache)
    }

    /// Backpropagates `g_out` (gradient with respect to the squashed output);
    /// returns the gradient with respect to the input plane.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &GeneratorCache<T>,
        g_out: &Tensor<T>,
        mut grads: Option<&mut ParamStore<T>>,
    ) -> Vec<T> {
        let mut g = g_out.clone();
        match self.cfg.head {
            Head::Deformation { d_max } => {
                let d = T::of(d_max);
                for (gv, o) in g.data.iter_mut().zip(&cache.out.data) {
                    let t = *o / d;
                    *gv = *gv * d * (T::one() - t * t);
                }
            }
            Head::Mask => {
                for (gv, o) in g.data.iter_mut().zip(&cache.out.data) {
                    *gv = *gv * *o * (T::one() - *o);
                }
            }
        }
        let mut g = self.head.backward(p, &cache.head, &g, grads.as_deref_mut());
        let mut skip_grads = Vec::with_capacity(self.cfg.depth);
        for l in 0..self.cfg.depth {
            let gin = self.dec[l].backward(p, &cache.dec[l], &g, grads.as_deref_mut());
            let skip_c = self.enc[l].cout();
            let mut parts = gin.split(&[gin.c - skip_c, skip_c]);
            skip_grads.push(parts.pop().expect("two parts"));
            g = upsample2_backward(&parts[0]);
        }
        let gmid = self.mid.backward(p, &cache.mid, &g, grads.as_deref_mut());
        g = if self.cfg.param_dim > 0 {
            gmid.split(&[gmid.c - self.cfg.param_dim, self.cfg.param_dim])
                .swap_remove(0)
        } else {
            gmid
        };
        for l in (0..self.cfg.depth).rev() {
            let mut gl = avg_pool2_backward(&g);
            gl.add_assign(&skip_grads[l]);
            g = self.enc[l].backward(p, &cache.enc[l], &gl, grads.as_deref_mut());
        }
        g.data.truncate(cache.h * cache.w);
        g.data
    }
}
