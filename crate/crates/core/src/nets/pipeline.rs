// SPDX-License-Identifier: Apache-2.0

//! End-to-end objectives with analytic gradients: generator, warp and losses
//! for the deformation model, and mask generator through the frozen
//! deformation model for the corrector.
//!
//! Networks run in `T`; warping and losses always run in `f64`.

use super::generator::Generator;
use super::regressor::Regressor;
use super::{ParamStore, Scalar, Tensor};
use crate::diffwarp::{warp_plane, warp_plane_backward, DeformationMap};
use crate::losses::{
    gradient_l1, ksmooth_grad, litho_total, mean_abs_grad, opc_total, par_grad, reg_grad, smooth_grad, tv_diff_grad,
    EdgeWeightMap, LithoTerms, LossWeights, MaskLossWeights, MaskTerms,
};

/// One training example on a `w x h` grid. Planes are row-major in `[0, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct LithoExample<'a> {
    pub w: usize,
    pub h: usize,
    pub layout: &'a [f64],
    pub target: &'a [f64],
    pub param: &'a [f64],
}

/// Edge-aware weights computed from raw planes.
pub fn edge_weight_map(layout: &[f64], target: &[f64], w: usize, h: usize) -> EdgeWeightMap {
    let gs = gradient_l1(layout, w, h);
    let gi = gradient_l1(target, w, h);
    let weights = gs.iter().zip(&gi).map(|(a, b)| (-(a + b)).exp()).collect();
    EdgeWeightMap::new(w, h, weights).expect("weights in (0, 1]")
}

fn cast_vec<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|x| T::of(*x)).collect()
}

/// `None` when the head produced non-finite values.
fn try_map<T: Scalar>(t: &Tensor<T>) -> Option<DeformationMap> {
    let n = t.plane_len();
    let dx = t.data[..n].iter().map(|v| v.f64()).collect();
    let dy = t.data[n..2 * n].iter().map(|v| v.f64()).collect();
    DeformationMap::new(t.w, t.h, dx, dy).ok()
}

fn to_map<T: Scalar>(t: &Tensor<T>) -> DeformationMap {
    try_map(t).expect("finite parameters give a bounded head output")
}

/// Predicted map and warped image of `layout` under `param`.
pub fn predict<T: Scalar>(
    g: &Generator,
    pg: &ParamStore<T>,
    layout: &[f64],
    w: usize,
    h: usize,
    param: &[f64],
) -> (DeformationMap, Vec<f64>) {
    let (out, _) = g.forward(pg, &cast_vec::<T>(layout), h, w, &cast_vec::<T>(param));
    let map = to_map(&out);
    let j = warp_plane(layout, &map);
    (map, j)
}

/// Mask produced by the corrector for `layout`.
pub fn predict_mask<T: Scalar>(k: &Generator, pk: &ParamStore<T>, layout: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (out, _) = k.forward(pk, &cast_vec::<T>(layout), h, w, &[]);
    out.data.iter().map(|v| v.f64()).collect()
}

pub fn estimate_param<T: Scalar>(d: &Regressor, pd: &ParamStore<T>, img: &[f64], w: usize, h: usize) -> Vec<f64> {
    d.forward(pd, &cast_vec::<T>(img), h, w)
        .0
        .iter()
        .map(|v| v.f64())
        .collect()
}

#[derive(Clone, Debug)]
pub struct LithoOutcome {
    pub terms: LithoTerms,
    pub total: f64,
    pub map: DeformationMap,
    pub prediction: Vec<f64>,
    /// Gradient of the total with respect to the generator's input plane.
    pub input_grad: Vec<f64>,
}

impl LithoOutcome {
    /// Outcome of a forward pass whose output was not finite; no gradients
    /// are accumulated.
    fn diverged(w: usize, h: usize) -> Self {
        LithoOutcome {
            terms: LithoTerms {
                rec: f64::NAN,
                var: f64::NAN,
                smooth: f64::NAN,
                reg: f64::NAN,
                par: f64::NAN,
            },
            total: f64::NAN,
            map: DeformationMap::zeros(w, h),
            prediction: vec![f64::NAN; w * h],
            input_grad: vec![f64::NAN; w * h],
        }
    }
}

/// Generator objective. Parameter gradients are accumulated into `grads_g`
/// and `grads_d` when given; the regressor is otherwise treated as frozen.
#[allow(clippy::too_many_arguments)]
pub fn litho_objective<T: Scalar>(
    g: &Generator,
    pg: &ParamStore<T>,
    d: &Regressor,
    pd: &ParamStore<T>,
    ex: &LithoExample,
    weights: &LossWeights,
    edge: &EdgeWeightMap,
    grads_g: Option<&mut ParamStore<T>>,
    grads_d: Option<&mut ParamStore<T>>,
) -> LithoOutcome {
    let (w, h) = (ex.w, ex.h);
    let (out, gcache) = g.forward(pg, &cast_vec::<T>(ex.layout), h, w, &cast_vec::<T>(ex.param));
    let Some(map) = try_map(&out) else {
        return LithoOutcome::diverged(w, h);
    };
    let j = warp_plane(ex.layout, &map);

    let rec = mean_abs_grad(ex.target, &j);
    let var = tv_diff_grad(ex.target, &j, w, h);
    let smooth = smooth_grad(&map, edge);
    let reg = reg_grad(&map);
    let (est, dcache) = d.forward(pd, &cast_vec::<T>(&j), h, w);
    let est: Vec<f64> = est.iter().map(|v| v.f64()).collect();
    let (par, g_est) = par_grad(&est, ex.param);

    let terms = LithoTerms {
        rec: rec.value,
        var: var.value,
        smooth: smooth.value,
        reg: reg.value,
        par,
    };
    let total = litho_total(&terms, weights);

    let g_est_t: Vec<T> = g_est.iter().map(|v| T::of(weights.par * v)).collect();
    let g_j_par = d.backward(pd, &dcache, &g_est_t, grads_d);
    let g_j: Vec<f64> = (0..w * h)
        .map(|i| weights.rec * rec.wrt_b[i] + weights.var * var.wrt_b[i] + g_j_par[i].f64())
        .collect();
    let wg = warp_plane_backward(ex.layout, &map, &g_j);
    let mut g_map = Vec::with_capacity(2 * w * h);
    for i in 0..w * h {
        g_map.push(T::of(
            wg.dx[i] + weights.smooth * smooth.dx[i] + weights.reg * reg.dx[i],
        ));
    }
    for i in 0..w * h {
        g_map.push(T::of(
            wg.dy[i] + weights.smooth * smooth.dy[i] + weights.reg * reg.dy[i],
        ));
    }
    let g_in = g.backward(pg, &gcache, &Tensor::from_vec(2, h, w, g_map), grads_g);
    let input_grad = g_in.iter().zip(&wg.source).map(|(a, b)| a.f64() + b).collect();
    LithoOutcome {
        terms,
        total,
        map,
        prediction: j,
        input_grad,
    }
}

/// Regressor objective on a ground-truth image; returns the loss.
pub fn discriminator_objective<T: Scalar>(
    d: &Regressor,
    pd: &ParamStore<T>,
    image: &[f64],
    w: usize,
    h: usize,
    param: &[f64],
    grads_d: Option<&mut ParamStore<T>>,
) -> f64 {
    let (est, cache) = d.forward(pd, &cast_vec::<T>(image), h, w);
    let est: Vec<f64> = est.iter().map(|v| v.f64()).collect();
    let (loss, g) = par_grad(&est, param);
    if grads_d.is_some() {
        let g: Vec<T> = cast_vec(&g);
        d.backward(pd, &cache, &g, grads_d);
    }
    loss
}

#[derive(Clone, Debug)]
pub struct OpcOutcome {
    pub terms: MaskTerms,
    pub total: f64,
    pub mask: Vec<f64>,
    pub map: DeformationMap,
    pub prediction: Vec<f64>,
}

/// Corrector objective through the frozen deformation model: the mask is
/// printed by `g` under `param` and compared against the layout itself.
#[allow(clippy::too_many_arguments)]
pub fn opc_objective<T: Scalar>(
    k: &Generator,
    pk: &ParamStore<T>,
    g: &Generator,
    pg: &ParamStore<T>,
    layout: &[f64],
    w: usize,
    h: usize,
    param: &[f64],
    weights: &MaskLossWeights,
    grads_k: Option<&mut ParamStore<T>>,
) -> OpcOutcome {
    let (kout, kcache) = k.forward(pk, &cast_vec::<T>(layout), h, w, &[]);
    let mask: Vec<f64> = kout.data.iter().map(|v| v.f64()).collect();
    let (gout, gcache) = g.forward(pg, &kout.data, h, w, &cast_vec::<T>(param));
    let Some(map) = try_map(&gout) else {
        return OpcOutcome {
            terms: MaskTerms {
                io: f64::NAN,
                kvar: f64::NAN,
                ksmooth: f64::NAN,
            },
            total: f64::NAN,
            mask,
            map: DeformationMap::zeros(w, h),
            prediction: vec![f64::NAN; w * h],
        };
    };
    let j = warp_plane(&mask, &map);

    let io = mean_abs_grad(layout, &j);
    let kvar = tv_diff_grad(layout, &j, w, h);
    let (ksmooth, g_ks) = ksmooth_grad(&mask, w, h);
    let terms = MaskTerms {
        io: io.value,
        kvar: kvar.value,
        ksmooth,
    };
    let total = opc_total(&terms, weights);

    if grads_k.is_some() {
        let g_j: Vec<f64> = (0..w * h)
            .map(|i| weights.io * io.wrt_b[i] + weights.var * kvar.wrt_b[i])
            .collect();
        let wg = warp_plane_backward(&mask, &map, &g_j);
        let g_map: Vec<T> = wg.dx.iter().chain(&wg.dy).map(|v| T::of(*v)).collect();
        let g_through = g.backward(pg, &gcache, &Tensor::from_vec(2, h, w, g_map), None);
        let g_mask: Vec<T> = (0..w * h)
            .map(|i| T::of(wg.source[i] + weights.smooth * g_ks[i] + g_through[i].f64()))
            .collect();
        k.backward(pk, &kcache, &Tensor::from_vec(1, h, w, g_mask), grads_k);
    }
    OpcOutcome {
        terms,
        total,
        mask,
        map,
        prediction: j,
    }
}
