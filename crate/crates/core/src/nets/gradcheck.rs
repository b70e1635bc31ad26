// SPDX-License-Identifier: Apache-2.0

//! Finite-difference verification of every parameter gradient of both
//! training objectives on a tiny instance.

use std::fmt;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::generator::{Generator, GeneratorConfig, Head};
use super::pipeline::{discriminator_objective, edge_weight_map, litho_objective, opc_objective, LithoExample};
use super::regressor::{Regressor, RegressorConfig};
use super::ParamStore;
use crate::diffwarp::{cell_of, DeformationMap};
use crate::losses::{LossWeights, MaskLossWeights};

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub size: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub regressor_levels: usize,
    /// Entries checked per array; smaller arrays are checked exhaustively.
    pub per_array: usize,
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    /// Halvings of `step` tried when the difference interval straddles a
    /// kink of an absolute value or a bilinear cell seam.
    pub max_refinements: u32,
    /// Largest tolerated fraction of entries for which no kink-free step
    /// was found.
    pub max_nonsmooth: f64,
    pub seed: u64,
    /// Test fixture: perturbs the analytic gradient of the named array.
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            size: 8,
            depth: 1,
            base_channels: 4,
            regressor_levels: 3,
            per_array: 200,
            step: 1e-3,
            tolerance: 1e-4,
            floor: 1e-8,
            max_refinements: 10,
            max_nonsmooth: 0.05,
            seed: 7,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Mismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ArrayReport {
    pub objective: &'static str,
    pub name: String,
    pub size: usize,
    pub checked: usize,
    /// Entries checked with a step below `step` because of a nearby kink.
    pub refined: usize,
    pub nonsmooth: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub arrays: Vec<ArrayReport>,
    pub seconds: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.arrays.iter().all(|a| a.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ArrayReport> {
        self.arrays.iter().filter(|a| !a.passed)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.arrays {
            write!(
                f,
                "{} {:<14} {:<28} checked {:>3}/{:<5} refined {:>2} nonsmooth {:>2} max_rel {:.2e}",
                if a.passed { "ok  " } else { "FAIL" },
                a.objective,
                a.name,
                a.checked,
                a.size,
                a.refined,
                a.nonsmooth,
                a.max_rel_error
            )?;
            if let (false, Some(m)) = (a.passed, &a.worst) {
                write!(
                    f,
                    "  [index {} analytic {:.9e} numeric {:.9e}]",
                    m.index, m.analytic, m.numeric
                )?;
            }
            writeln!(f)?;
        }
        write!(
            f,
            "{} arrays, {} failed, {:.1}s",
            self.arrays.len(),
            self.failures().count(),
            self.seconds
        )
    }
}

/// Tiny nets with every head randomized so that no gradient path is trivially zero.
pub struct Instance {
    pub g: Generator,
    pub pg: ParamStore<f64>,
    pub d: Regressor,
    pub pd: ParamStore<f64>,
    pub k: Generator,
    pub pk: ParamStore<f64>,
    pub layout: Vec<f64>,
    pub target: Vec<f64>,
    pub param: Vec<f64>,
}

fn randomize_head(p: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    for name in ["head.weight", "head.bias"] {
        let id = p.id(name).expect("head arrays");
        p.get_mut(id).iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
}

/// Generic grey levels: binary planes make neighbouring differences tie
/// exactly, which puts the L1 and total-variation terms on their kinks.
fn random_plane(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n * n).map(|_| rng.gen_range(0.05..0.95)).collect()
}

pub fn build_instance(opts: &GradcheckOptions) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let g = Generator::new(GeneratorConfig {
        param_dim: 1,
        head: Head::Deformation { d_max: 8.0 },
        depth: opts.depth,
        base_channels: opts.base_channels,
    })
    .expect("valid tiny generator");
    let k = Generator::new(GeneratorConfig {
        param_dim: 0,
        head: Head::Mask,
        depth: opts.depth,
        base_channels: opts.base_channels,
    })
    .expect("valid tiny corrector");
    let d = Regressor::new(RegressorConfig {
        param_dim: 1,
        levels: opts.regressor_levels,
        base_channels: opts.base_channels,
    })
    .expect("valid tiny regressor");
    let mut pg = ParamStore::init(g.specs(), &mut rng);
    let mut pd = ParamStore::init(d.specs(), &mut rng);
    let mut pk = ParamStore::init(k.specs(), &mut rng);
    // Small head weights around a fractional offset of (0.5, -0.4) px keep
    // every sample strictly inside one bilinear cell across the difference
    // steps; integer offsets (the identity warp included) sit on cell seams.
    randomize_head(&mut pg, &mut rng, 0.02);
    let bias = pg.id("head.bias").expect("head bias");
    pg.get_mut(bias)
        .copy_from_slice(&[(0.5f64 / 8.0).atanh(), (-0.4f64 / 8.0).atanh()]);
    randomize_head(&mut pd, &mut rng, 0.5);
    randomize_head(&mut pk, &mut rng, 0.5);
    let n = opts.size;
    Instance {
        g,
        pg,
        d,
        pd,
        k,
        pk,
        layout: random_plane(&mut rng, n),
        target: random_plane(&mut rng, n),
        param: vec![0.3],
    }
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Objective value plus the kink signature of the point it was evaluated at.
type Probe<'a> = dyn Fn(&ParamStore<f64>) -> (f64, Vec<i64>) + 'a;

fn check_store(
    objective: &'static str,
    prefix: &str,
    params: &ParamStore<f64>,
    analytic: &ParamStore<f64>,
    f: &Probe,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> Vec<ArrayReport> {
    let mut out = Vec::with_capacity(params.len());
    for id in 0..params.len() {
        let name = format!("{prefix}/{}", params.name(id));
        let size = params.get(id).len();
        let indices: Vec<usize> = if size <= opts.per_array {
            (0..size).collect()
        } else {
            let mut v = sample(rng, size, opts.per_array).into_vec();
            v.sort_unstable();
            v
        };
        let corrupt = opts.corrupt.as_deref() == Some(name.as_str());
        let mut probe = params.clone();
        // Five-point central difference at the first step whose stencil
        // holds no kink.
        let mut fd = |i: usize| -> Option<(f64, u32)> {
            let x = probe.get(id)[i];
            let mut result = None;
            for r in 0..=opts.max_refinements {
                let h = opts.step / f64::from(1u32 << r);
                let mut eval = |t: f64| {
                    probe.get_mut(id)[i] = x + t;
                    f(&probe)
                };
                let (f2p, s2p) = eval(2.0 * h);
                let (f1p, s1p) = eval(h);
                let (f1m, s1m) = eval(-h);
                let (f2m, s2m) = eval(-2.0 * h);
                if s2p == s1p && s1p == s1m && s1m == s2m {
                    result = Some(((8.0 * (f1p - f1m) - (f2p - f2m)) / (12.0 * h), r));
                    break;
                }
            }
            probe.get_mut(id)[i] = x;
            result
        };
        let mut report = ArrayReport {
            objective,
            name,
            size,
            checked: 0,
            refined: 0,
            nonsmooth: 0,
            max_rel_error: 0.0,
            worst: None,
            passed: true,
        };
        for &i in &indices {
            let mut a = analytic.get(id)[i];
            if corrupt {
                a = a * 1.1 + 1e-3;
            }
            let Some((n, r)) = fd(i) else {
                report.nonsmooth += 1;
                continue;
            };
            report.checked += 1;
            report.refined += usize::from(r > 0);
            let err = rel_error(a, n, opts.floor);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(Mismatch {
                    index: i,
                    analytic: a,
                    numeric: n,
                    rel_error: err,
                });
            }
        }
        let nonsmooth_ok = (report.nonsmooth as f64) <= opts.max_nonsmooth * indices.len() as f64;
        report.passed = report.max_rel_error <= opts.tolerance && nonsmooth_ok && report.checked > 0;
        out.push(report);
    }
    out
}

fn sign(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Signs of forward differences in both directions.
fn diff_signs(p: &[f64], n: usize, out: &mut Vec<i64>) {
    for i in 0..n * n {
        if i % n + 1 < n {
            out.push(sign(p[i + 1] - p[i]));
        }
        if i + n < n * n {
            out.push(sign(p[i + n] - p[i]));
        }
    }
}

fn warp_cells(map: &DeformationMap, out: &mut Vec<i64>) {
    let (w, h) = map.dims();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = map.at(x, y);
            let (cx, sx) = cell_of(x as f64 + dx, w);
            let (cy, sy) = cell_of(y as f64 + dy, h);
            out.extend([cx as i64, i64::from(sx), cy as i64, i64::from(sy)]);
        }
    }
}

/// Everything the objectives take an absolute value of, plus the warp cells.
fn litho_signature(target: &[f64], j: &[f64], map: &DeformationMap, n: usize) -> Vec<i64> {
    let mut sig = Vec::new();
    let d: Vec<f64> = target.iter().zip(j).map(|(a, b)| a - b).collect();
    sig.extend(d.iter().map(|v| sign(*v)));
    diff_signs(&d, n, &mut sig);
    diff_signs(map.dx(), n, &mut sig);
    diff_signs(map.dy(), n, &mut sig);
    sig.extend(map.dx().iter().chain(map.dy()).map(|v| sign(*v)));
    warp_cells(map, &mut sig);
    sig
}

fn opc_signature(layout: &[f64], j: &[f64], mask: &[f64], map: &DeformationMap, n: usize) -> Vec<i64> {
    let mut sig = Vec::new();
    let d: Vec<f64> = layout.iter().zip(j).map(|(a, b)| a - b).collect();
    sig.extend(d.iter().map(|v| sign(*v)));
    diff_signs(&d, n, &mut sig);
    diff_signs(mask, n, &mut sig);
    warp_cells(map, &mut sig);
    sig
}

/// Checks the generator objective against the generator parameters, the
/// regressor objective against the regressor parameters, and the corrector
/// objective (through the frozen generator) against the corrector parameters.
pub fn gradcheck(opts: &GradcheckOptions) -> GradcheckReport {
    let start = Instant::now();
    let inst = build_instance(opts);
    let n = opts.size;
    let ex = LithoExample {
        w: n,
        h: n,
        layout: &inst.layout,
        target: &inst.target,
        param: &inst.param,
    };
    let lw = LossWeights::default();
    let mw = MaskLossWeights::default();
    let edge = edge_weight_map(&inst.layout, &inst.target, n, n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut arrays = Vec::new();

    let mut gg = inst.pg.zeros_like();
    litho_objective(
        &inst.g,
        &inst.pg,
        &inst.d,
        &inst.pd,
        &ex,
        &lw,
        &edge,
        Some(&mut gg),
        None,
    );
    let f = |p: &ParamStore<f64>| {
        let o = litho_objective(&inst.g, p, &inst.d, &inst.pd, &ex, &lw, &edge, None, None);
        (o.total, litho_signature(&inst.target, &o.prediction, &o.map, n))
    };
    arrays.extend(check_store("litho_total", "G", &inst.pg, &gg, &f, opts, &mut rng));

    let mut gd = inst.pd.zeros_like();
    discriminator_objective(&inst.d, &inst.pd, &inst.target, n, n, &inst.param, Some(&mut gd));
    let f = |p: &ParamStore<f64>| {
        (
            discriminator_objective(&inst.d, p, &inst.target, n, n, &inst.param, None),
            Vec::new(),
        )
    };
    arrays.extend(check_store("l_par_disc", "D", &inst.pd, &gd, &f, opts, &mut rng));

    let mut gk = inst.pk.zeros_like();
    opc_objective(
        &inst.k,
        &inst.pk,
        &inst.g,
        &inst.pg,
        &inst.layout,
        n,
        n,
        &inst.param,
        &mw,
        Some(&mut gk),
    );
    let f = |p: &ParamStore<f64>| {
        let o = opc_objective(
            &inst.k,
            p,
            &inst.g,
            &inst.pg,
            &inst.layout,
            n,
            n,
            &inst.param,
            &mw,
            None,
        );
        (o.total, opc_signature(&inst.layout, &o.prediction, &o.mask, &o.map, n))
    };
    arrays.extend(check_store("opc_total", "K", &inst.pk, &gk, &f, opts, &mut rng));

    GradcheckReport {
        arrays,
        seconds: start.elapsed().as_secs_f64(),
    }
}
