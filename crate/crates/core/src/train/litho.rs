// SPDX-License-Identifier: Apache-2.0

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use super::checkpoint::{ModelCheckpoint, Role};
use super::data::{dihedral, load_supervised, split_layouts, transform_count, AuditedLoader, Sample};
use super::eval::{score, Score, BINARIZE_AT};
use super::{stream, Adam, TrainConfig, TrainingLog, SALT_INIT_D, SALT_INIT_G, SALT_ORDER};
use crate::error::{Error, Result};
use crate::layoutgen::{manifest_hash, DatasetManifest, Split};
use crate::losses::LithoTerms;
use crate::nets::pipeline::{discriminator_objective, edge_weight_map, litho_objective, predict, LithoExample};
use crate::nets::{Generator, ParamStore, Regressor};
use crate::raster::{binarize, Raster};

pub const LITHO_COLUMNS: [&str; 10] = [
    "rec",
    "var",
    "smooth",
    "reg",
    "par",
    "total",
    "disc",
    "val_iou",
    "val_ssim",
    "val_error",
];

#[derive(Clone, Debug)]
pub struct LithoTraining {
    /// Parameters of the epoch with the best validation IOU.
    pub checkpoint: ModelCheckpoint,
    pub log: TrainingLog,
    pub warnings: Vec<String>,
}

/// Planes of one sample under dihedral transform `k`.
fn transformed(s: &Sample, w: usize, h: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    if k == 0 {
        (s.layout.to_vec(), s.target.clone())
    } else {
        (dihedral(&s.layout, w, h, k), dihedral(&s.target, w, h, k))
    }
}

fn validate(g: &Generator, pg: &ParamStore<f32>, val: &[Sample], w: usize, h: usize) -> Result<Option<Score>> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut acc = Score {
        iou: 0.0,
        ssim: 0.0,
        pixel_error: 0.0,
    };
    for s in val {
        let (_, j) = predict(g, pg, &s.layout, w, h, &s.param);
        let target = binarize(&Raster::new(w, h, s.target.clone())?, BINARIZE_AT);
        let sc = score(&Raster::from_clamped(w, h, j)?, &target)?;
        acc.iou += sc.iou;
        acc.ssim += sc.ssim;
        acc.pixel_error += sc.pixel_error;
    }
    let n = val.len() as f64;
    Ok(Some(Score {
        iou: acc.iou / n,
        ssim: acc.ssim / n,
        pixel_error: acc.pixel_error / n,
    }))
}

fn row(terms: &LithoTerms, total: f64, disc: f64, val: Option<Score>) -> Vec<Option<f64>> {
    let mut v: Vec<Option<f64>> = terms.as_array().iter().map(|x| Some(*x)).collect();
    v.push(Some(total));
    v.push(Some(disc));
    v.push(val.map(|s| s.iou));
    v.push(val.map(|s| s.ssim));
    v.push(val.map(|s| s.pixel_error));
    v
}

fn add_terms(acc: &mut LithoTerms, t: &LithoTerms, s: f64) {
    acc.rec += s * t.rec;
    acc.var += s * t.var;
    acc.smooth += s * t.smooth;
    acc.reg += s * t.reg;
    acc.par += s * t.par;
}

/// Trains the deformation generator against the oracle ground truth,
/// alternating regressor and generator updates on every batch.
pub fn train_lithonet(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<LithoTraining> {
    cfg.validate()?;
    let (w, h) = (manifest.layout_spec.width, manifest.layout_spec.height);
    let param_dim = manifest.param_dim();
    let g = Generator::new(cfg.generator_config(param_dim))?;
    let d = Regressor::new(cfg.regressor_config(param_dim))?;
    let loader = AuditedLoader::new(manifest);
    let train_ids = split_layouts(manifest, Split::Train, cfg.max_train_layouts);
    let train = load_supervised(&loader, Split::Train, &train_ids)?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let val_ids = split_layouts(manifest, Split::Val, cfg.max_val_layouts);
    let val = load_supervised(&loader, Split::Val, &val_ids)?;
    let hash = manifest_hash(&manifest.root)?;

    let mut pg = ParamStore::<f32>::init(g.specs(), &mut stream(cfg.seed, SALT_INIT_G));
    let mut pd = ParamStore::<f32>::init(d.specs(), &mut stream(cfg.seed, SALT_INIT_D));
    g.check(&pg, h, w, param_dim)?;
    d.check(&pd, h, w)?;
    let mut adam_g = Adam::new(&pg, cfg.lr_g, cfg.beta1, cfg.beta2, cfg.eps);
    let mut adam_d = Adam::new(&pd, cfg.lr_d, cfg.beta1, cfg.beta2, cfg.eps);
    let mut gg = pg.zeros_like();
    let mut gd = pd.zeros_like();
    let mut order_rng = stream(cfg.seed, SALT_ORDER);
    let weights = cfg.loss_weights;
    let n_transforms = if cfg.augment { transform_count(w, h) } else { 1 };

    let mut log = TrainingLog::new(&LITHO_COLUMNS);
    let mut warnings = Vec::new();

    // Epoch 0: the initial weights on a fixed prefix of the training set.
    {
        let n0 = cfg.initial_eval_samples.clamp(1, train.len());
        let mut terms = LithoTerms::default();
        let (mut total, mut disc) = (0.0, 0.0);
        for s in &train[..n0] {
            let edge = edge_weight_map(&s.layout, &s.target, w, h);
            let ex = LithoExample {
                w,
                h,
                layout: &s.layout,
                target: &s.target,
                param: &s.param,
            };
            let out = litho_objective(&g, &pg, &d, &pd, &ex, &weights, &edge, None, None);
            add_terms(&mut terms, &out.terms, 1.0 / n0 as f64);
            total += out.total / n0 as f64;
            disc += discriminator_objective(&d, &pd, &s.target, w, h, &s.param, None) / n0 as f64;
        }
        let v = validate(&g, &pg, &val, w, h)?;
        log.push(0, row(&terms, total, disc, v));
    }
    let mut best = (log.value(0, "val_iou"), 0usize, pg.clone(), pd.clone());
    let mut peak = best.0.unwrap_or(f64::NEG_INFINITY);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut order_rng);
        let plan: Vec<(usize, usize)> = order
            .into_iter()
            .map(|i| {
                (
                    i,
                    if n_transforms > 1 {
                        order_rng.gen_range(0..n_transforms)
                    } else {
                        0
                    },
                )
            })
            .collect();
        let mut terms = LithoTerms::default();
        let (mut total, mut disc) = (0.0, 0.0);
        let n = plan.len() as f64;

        for (batch_id, batch) in plan.chunks(cfg.batch_size).enumerate() {
            let planes: Vec<(Vec<f64>, Vec<f64>)> =
                batch.iter().map(|&(i, k)| transformed(&train[i], w, h, k)).collect();
            let inv = 1.0 / batch.len() as f32;

            for step in 0..cfg.d_steps {
                gd.fill_zero();
                for (&(i, _), (_, target)) in batch.iter().zip(&planes) {
                    let l = discriminator_objective(&d, &pd, target, w, h, &train[i].param, Some(&mut gd));
                    if step == 0 {
                        disc += l / n;
                    }
                }
                gd.scale(inv);
                if !gd.all_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: batch_id,
                        detail: "non-finite regressor gradient".into(),
                    });
                }
                adam_d.step(&mut pd, &gd);
            }

            gg.fill_zero();
            for (&(i, _), (layout, target)) in batch.iter().zip(&planes) {
                let edge = edge_weight_map(layout, target, w, h);
                let ex = LithoExample {
                    w,
                    h,
                    layout,
                    target,
                    param: &train[i].param,
                };
                let out = litho_objective(&g, &pg, &d, &pd, &ex, &weights, &edge, Some(&mut gg), None);
                if !out.total.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: batch_id,
                        detail: format!("litho_total = {} on sample {}", out.total, train[i].id),
                    });
                }
                add_terms(&mut terms, &out.terms, 1.0 / n);
                total += out.total / n;
            }
            gg.scale(inv);
            if !gg.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_id,
                    detail: "non-finite generator gradient".into(),
                });
            }
            adam_g.step(&mut pg, &gg);
        }

        let evaluate_now = epoch % cfg.eval_interval == 0 || epoch == cfg.epochs;
        let v = if evaluate_now {
            validate(&g, &pg, &val, w, h)?
        } else {
            None
        };
        log.push(epoch, row(&terms, total, disc, v));
        log::info!(
            "litho epoch {epoch}/{}: total {total:.5} rec {:.5} val_iou {} ({:.1}s)",
            cfg.epochs,
            terms.rec,
            v.map_or("-".to_string(), |s| format!("{:.4}", s.iou)),
            started.elapsed().as_secs_f64()
        );
        if let Some(s) = v {
            if s.iou > peak {
                peak = s.iou;
            }
            if s.iou < peak - 0.2 {
                let msg = format!(
                    "epoch {epoch}: validation IOU {:.4} fell more than 0.2 below peak {peak:.4}",
                    s.iou
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            if best.0.is_none_or(|b| s.iou > b) {
                best = (Some(s.iou), epoch, pg.clone(), pd.clone());
            }
        }
    }
    if val.is_empty() {
        best = (None, cfg.epochs, pg, pd);
    }

    let (val_iou, epoch, pg, pd) = best;
    Ok(LithoTraining {
        checkpoint: ModelCheckpoint {
            role: Role::Lithonet,
            generator_config: *g.config(),
            generator: pg,
            regressor_config: Some(*d.config()),
            regressor: Some(pd),
            train_config: cfg.clone(),
            manifest_hash: hash,
            param_grid: manifest.params.iter().map(|p| p.components().to_vec()).collect(),
            epoch,
            val_iou,
        },
        log,
        warnings,
    })
}
