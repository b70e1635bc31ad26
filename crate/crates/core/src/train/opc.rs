// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use super::checkpoint::{ModelCheckpoint, Role};
use super::data::{dihedral, load_layouts, split_layouts, transform_count, AuditedLoader};
use super::eval::{score, LithoModel, Score, BINARIZE_AT};
use super::{stream, Adam, TrainConfig, TrainingLog, SALT_INIT_K, SALT_ORDER};
use crate::error::{Error, Result};
use crate::layoutgen::{manifest_hash, DatasetManifest, Split};
use crate::losses::MaskTerms;
use crate::nets::pipeline::opc_objective;
use crate::nets::{Generator, ParamStore};
use crate::raster::{binarize, Raster};

pub const OPC_COLUMNS: [&str; 7] = ["io", "kvar", "ksmooth", "total", "val_iou", "val_ssim", "val_error"];

#[derive(Clone, Debug)]
pub struct OpcTraining {
    pub checkpoint: ModelCheckpoint,
    pub log: TrainingLog,
    pub warnings: Vec<String>,
    /// Every dataset file opened while training.
    pub opened: Vec<PathBuf>,
    pub litho_hash_before: String,
    pub litho_hash_after: String,
}

#[allow(clippy::too_many_arguments)]
fn validate(
    k: &Generator,
    pk: &ParamStore<f32>,
    litho: &LithoModel,
    val: &[(String, Rc<Vec<f64>>)],
    grid: &[Vec<f64>],
    w: usize,
    h: usize,
    cfg: &TrainConfig,
) -> Result<Option<Score>> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut acc = [0.0; 3];
    for (i, (_, layout)) in val.iter().enumerate() {
        // parameters cycle over the grid so every setting is scored
        let y = &grid[i % grid.len()];
        let out = opc_objective(
            k,
            pk,
            &litho.generator,
            &litho.params,
            layout,
            w,
            h,
            y,
            &cfg.mask_loss_weights,
            None,
        );
        let target = binarize(&Raster::new(w, h, layout.to_vec())?, BINARIZE_AT);
        let s = score(&Raster::from_clamped(w, h, out.prediction)?, &target)?;
        acc[0] += s.iou;
        acc[1] += s.ssim;
        acc[2] += s.pixel_error;
    }
    let n = val.len() as f64;
    Ok(Some(Score {
        iou: acc[0] / n,
        ssim: acc[1] / n,
        pixel_error: acc[2] / n,
    }))
}

fn row(t: &MaskTerms, total: f64, v: Option<Score>) -> Vec<Option<f64>> {
    vec![
        Some(t.io),
        Some(t.kvar),
        Some(t.ksmooth),
        Some(total),
        v.map(|s| s.iou),
        v.map(|s| s.ssim),
        v.map(|s| s.pixel_error),
    ]
}

/// Trains the mask generator through the frozen deformation model. Only
/// layout images are read; the deformation model's parameters are verified
/// unchanged afterwards.
pub fn train_opcnet(
    manifest: &DatasetManifest,
    litho_ckpt: &ModelCheckpoint,
    cfg: &TrainConfig,
) -> Result<OpcTraining> {
    cfg.validate()?;
    let litho = LithoModel::from_checkpoint(litho_ckpt)?;
    let before = litho.params.hash();
    let (w, h) = (manifest.layout_spec.width, manifest.layout_spec.height);
    let grid: Vec<Vec<f64>> = manifest.params.iter().map(|p| p.components().to_vec()).collect();
    if grid.is_empty() {
        return Err(Error::Config("manifest declares no parameter settings".into()));
    }
    litho.generator.check(&litho.params, h, w, grid[0].len())?;

    let k = Generator::new(cfg.opc_config())?;
    let loader = AuditedLoader::new(manifest);
    let train = load_layouts(
        &loader,
        Split::Train,
        &split_layouts(manifest, Split::Train, cfg.max_train_layouts),
    )?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let val = load_layouts(
        &loader,
        Split::Val,
        &split_layouts(manifest, Split::Val, cfg.max_val_layouts),
    )?;
    let hash = manifest_hash(&manifest.root)?;

    let mut pk = ParamStore::<f32>::init(k.specs(), &mut stream(cfg.seed, SALT_INIT_K));
    k.check(&pk, h, w, 0)?;
    let mut adam = Adam::new(&pk, cfg.lr_opc, cfg.beta1, cfg.beta2, cfg.eps);
    let mut gk = pk.zeros_like();
    let mut rng = stream(cfg.seed, SALT_ORDER);
    let weights = cfg.mask_loss_weights;
    let n_transforms = if cfg.augment { transform_count(w, h) } else { 1 };
    let frozen = &litho;

    let mut log = TrainingLog::new(&OPC_COLUMNS);
    let mut warnings = Vec::new();
    {
        let n0 = cfg.initial_eval_samples.clamp(1, train.len());
        let mut t = MaskTerms::default();
        let mut total = 0.0;
        for (i, (_, layout)) in train[..n0].iter().enumerate() {
            let y = &grid[i % grid.len()];
            let out = opc_objective(
                &k,
                &pk,
                &frozen.generator,
                &frozen.params,
                layout,
                w,
                h,
                y,
                &weights,
                None,
            );
            t.io += out.terms.io / n0 as f64;
            t.kvar += out.terms.kvar / n0 as f64;
            t.ksmooth += out.terms.ksmooth / n0 as f64;
            total += out.total / n0 as f64;
        }
        let v = validate(&k, &pk, frozen, &val, &grid, w, h, cfg)?;
        log.push(0, row(&t, total, v));
    }
    let mut best = (log.value(0, "val_iou"), 0usize, pk.clone());
    let mut peak = best.0.unwrap_or(f64::NEG_INFINITY);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let plan: Vec<(usize, usize, usize)> = order
            .into_iter()
            .map(|i| {
                let y = rng.gen_range(0..grid.len());
                let t = if n_transforms > 1 {
                    rng.gen_range(0..n_transforms)
                } else {
                    0
                };
                (i, y, t)
            })
            .collect();
        let n = plan.len() as f64;
        let mut t = MaskTerms::default();
        let mut total = 0.0;
        for (batch_id, batch) in plan.chunks(cfg.batch_size).enumerate() {
            gk.fill_zero();
            for &(i, yi, tr) in batch {
                let layout = &train[i].1;
                let plane = if tr == 0 {
                    layout.to_vec()
                } else {
                    dihedral(layout, w, h, tr)
                };
                let out = opc_objective(
                    &k,
                    &pk,
                    &frozen.generator,
                    &frozen.params,
                    &plane,
                    w,
                    h,
                    &grid[yi],
                    &weights,
                    Some(&mut gk),
                );
                if !out.total.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: batch_id,
                        detail: format!("opc_total = {} on layout {}", out.total, train[i].0),
                    });
                }
                t.io += out.terms.io / n;
                t.kvar += out.terms.kvar / n;
                t.ksmooth += out.terms.ksmooth / n;
                total += out.total / n;
            }
            gk.scale(1.0 / batch.len() as f32);
            if !gk.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_id,
                    detail: "non-finite mask generator gradient".into(),
                });
            }
            adam.step(&mut pk, &gk);
        }
        let evaluate_now = epoch % cfg.eval_interval == 0 || epoch == cfg.epochs;
        let v = if evaluate_now {
            validate(&k, &pk, frozen, &val, &grid, w, h, cfg)?
        } else {
            None
        };
        log.push(epoch, row(&t, total, v));
        log::info!(
            "opc epoch {epoch}/{}: total {total:.5} val_iou {} ({:.1}s)",
            cfg.epochs,
            v.map_or("-".to_string(), |s| format!("{:.4}", s.iou)),
            started.elapsed().as_secs_f64()
        );
        if let Some(s) = v {
            peak = peak.max(s.iou);
            if s.iou < peak - 0.2 {
                let msg = format!(
                    "epoch {epoch}: validation IOU {:.4} fell more than 0.2 below peak {peak:.4}",
                    s.iou
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            if best.0.is_none_or(|b| s.iou > b) {
                best = (Some(s.iou), epoch, pk.clone());
            }
        }
    }
    if val.is_empty() {
        best = (None, cfg.epochs, pk);
    }

    let after = frozen.params.hash();
    if after != before || after != litho_ckpt.generator.hash() {
        return Err(Error::FrozenViolation { before, after });
    }
    let (val_iou, epoch, pk) = best;
    Ok(OpcTraining {
        checkpoint: ModelCheckpoint {
            role: Role::Opcnet,
            generator_config: *k.config(),
            generator: pk,
            regressor_config: None,
            regressor: None,
            train_config: cfg.clone(),
            manifest_hash: hash,
            param_grid: manifest.params.iter().map(|p| p.components().to_vec()).collect(),
            epoch,
            val_iou,
        },
        log,
        warnings,
        opened: loader.opened(),
        litho_hash_before: before,
        litho_hash_after: after,
    })
}
