// SPDX-License-Identifier: Apache-2.0

//! Inference with trained checkpoints and metric reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{ModelCheckpoint, Role};
use super::data::AuditedLoader;
use crate::diffwarp::DeformationMap;
use crate::error::{Error, Result};
use crate::faboracle::FabParam;
use crate::layoutgen::{manifest_hash, DatasetManifest, Split};
use crate::losses::MaskLossWeights;
use crate::nets::pipeline::{opc_objective, predict, predict_mask};
use crate::nets::{Generator, ParamStore};
use crate::raster::{binarize, iou, pixel_error_rate, ssim, BinaryRaster, Raster};

/// Binarization threshold applied to every prediction before scoring.
pub const BINARIZE_AT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub iou: f64,
    pub ssim: f64,
    pub pixel_error: f64,
}

/// Scores a continuous prediction, binarized at 0.5, against a reference.
pub fn score(prediction: &Raster, reference: &BinaryRaster) -> Result<Score> {
    let bin = binarize(prediction, BINARIZE_AT);
    Ok(Score {
        iou: iou(&bin, reference)?,
        ssim: ssim(&bin.to_raster(), &reference.to_raster())?,
        pixel_error: pixel_error_rate(&bin, reference)?,
    })
}

/// Deformation model ready for inference.
#[derive(Clone, Debug)]
pub struct LithoModel {
    pub generator: Generator,
    pub params: ParamStore<f32>,
}

impl LithoModel {
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        ckpt.require_role(Role::Lithonet)?;
        Ok(LithoModel {
            generator: Generator::new(ckpt.generator_config)?,
            params: ckpt.generator.clone(),
        })
    }

    /// Deformation map of `s` under `y` and the warped layout.
    pub fn predict(&self, s: &Raster, y: &FabParam) -> Result<(DeformationMap, Raster)> {
        let (w, h) = s.dims();
        self.generator.check(&self.params, h, w, y.dim())?;
        let (map, j) = predict(&self.generator, &self.params, s.pixels(), w, h, y.components());
        Ok((map, Raster::from_clamped(w, h, j)?))
    }
}

/// Mask generator ready for inference.
#[derive(Clone, Debug)]
pub struct OpcModel {
    pub generator: Generator,
    pub params: ParamStore<f32>,
}

impl OpcModel {
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        ckpt.require_role(Role::Opcnet)?;
        Ok(OpcModel {
            generator: Generator::new(ckpt.generator_config)?,
            params: ckpt.generator.clone(),
        })
    }

    pub fn mask(&self, s: &Raster) -> Result<Raster> {
        let (w, h) = s.dims();
        self.generator.check(&self.params, h, w, 0)?;
        Raster::from_clamped(w, h, predict_mask(&self.generator, &self.params, s.pixels(), w, h))
    }
}

pub fn predict_litho(ckpt: &ModelCheckpoint, s: &Raster, y: &FabParam) -> Result<(DeformationMap, Raster)> {
    LithoModel::from_checkpoint(ckpt)?.predict(s, y)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionMetrics {
    pub iou_corrected: f64,
    pub iou_uncorrected: f64,
    pub ssim_corrected: f64,
    pub ssim_uncorrected: f64,
    pub err_corrected: f64,
    pub err_uncorrected: f64,
    /// I/O-consistency loss of each pipeline against the layout.
    pub io_corrected: f64,
    pub io_uncorrected: f64,
}

#[derive(Clone, Debug)]
pub struct Correction {
    pub mask: Raster,
    pub corrected: Raster,
    pub uncorrected: Raster,
    pub metrics: CorrectionMetrics,
}

/// Corrects `s`, then prints both the mask and the raw layout through the
/// deformation model and scores each print against `s`.
pub fn correct_and_verify(opc: &OpcModel, litho: &LithoModel, s: &Raster, y: &FabParam) -> Result<Correction> {
    let (w, h) = s.dims();
    litho.generator.check(&litho.params, h, w, y.dim())?;
    opc.generator.check(&opc.params, h, w, 0)?;
    let target = binarize(s, BINARIZE_AT);
    let out = opc_objective(
        &opc.generator,
        &opc.params,
        &litho.generator,
        &litho.params,
        s.pixels(),
        w,
        h,
        y.components(),
        &MaskLossWeights::default(),
        None,
    );
    let (_, raw) = litho.predict(s, y)?;
    let corrected = Raster::from_clamped(w, h, out.prediction)?;
    let c = score(&corrected, &target)?;
    let u = score(&raw, &target)?;
    let io = |j: &Raster| crate::losses::l_io(s, j);
    let metrics = CorrectionMetrics {
        iou_corrected: c.iou,
        iou_uncorrected: u.iou,
        ssim_corrected: c.ssim,
        ssim_uncorrected: u.ssim,
        err_corrected: c.pixel_error,
        err_uncorrected: u.pixel_error,
        io_corrected: io(&corrected)?,
        io_uncorrected: io(&raw)?,
    };
    Ok(Correction {
        mask: Raster::from_clamped(w, h, out.mask)?,
        corrected,
        uncorrected: raw,
        metrics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub id: String,
    pub param: f64,
    pub iou: f64,
    pub ssim: f64,
    pub pixel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    pub manifest_hash: String,
    pub checkpoint_manifest_hash: String,
    pub mean_iou: f64,
    pub mean_ssim: f64,
    pub mean_pixel_error: f64,
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    fn from_rows(split: Split, manifest_hash: String, checkpoint_manifest_hash: String, rows: Vec<MetricsRow>) -> Self {
        let n = rows.len() as f64;
        let mean = |f: fn(&MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        MetricsReport {
            split,
            manifest_hash,
            checkpoint_manifest_hash,
            mean_iou: mean(|r| r.iou),
            mean_ssim: mean(|r| r.ssim),
            mean_pixel_error: mean(|r| r.pixel_error),
            rows,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::format("metrics csv", e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["id", "param", "iou", "ssim", "pixel_error"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                r.param.to_string(),
                r.iou.to_string(),
                r.ssim.to_string(),
                r.pixel_error.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

fn check_manifest(ckpt: &ModelCheckpoint, manifest: &DatasetManifest, allow_mismatch: bool) -> Result<String> {
    let hash = manifest_hash(&manifest.root)?;
    if hash != ckpt.manifest_hash {
        if !allow_mismatch {
            return Err(Error::Config(format!(
                "checkpoint was trained on manifest {} but this manifest hashes to {hash}",
                ckpt.manifest_hash
            )));
        }
        log::warn!(
            "manifest hash mismatch: checkpoint {} vs dataset {hash}",
            ckpt.manifest_hash
        );
    }
    Ok(hash)
}

/// Scores the deformation model on every (layout, parameter) pair of `split`
/// against the oracle ground truth.
pub fn evaluate(
    ckpt: &ModelCheckpoint,
    manifest: &DatasetManifest,
    split: Split,
    allow_manifest_mismatch: bool,
) -> Result<MetricsReport> {
    let model = LithoModel::from_checkpoint(ckpt)?;
    let hash = check_manifest(ckpt, manifest, allow_manifest_mismatch)?;
    let loader = AuditedLoader::new(manifest);
    let (w, h) = (manifest.layout_spec.width, manifest.layout_spec.height);
    let mut rows = Vec::new();
    for e in manifest.split(split) {
        let layout = Raster::new(w, h, loader.layout(e)?.to_vec())?;
        let gt = binarize(&Raster::new(w, h, loader.ground_truth(e)?)?, BINARIZE_AT);
        let (_, j) = model.predict(&layout, &e.param)?;
        let s = score(&j, &gt)?;
        rows.push(MetricsRow {
            id: e.id.clone(),
            param: e.param.primary(),
            iou: s.iou,
            ssim: s.ssim,
            pixel_error: s.pixel_error,
        });
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("split {split:?} is empty")));
    }
    Ok(MetricsReport::from_rows(split, hash, ckpt.manifest_hash.clone(), rows))
}

/// Scores the corrected pipeline against the layouts of `split`; reads
/// layout images only.
pub fn evaluate_correction(
    opc: &ModelCheckpoint,
    litho: &ModelCheckpoint,
    manifest: &DatasetManifest,
    split: Split,
    allow_manifest_mismatch: bool,
) -> Result<MetricsReport> {
    let k = OpcModel::from_checkpoint(opc)?;
    let g = LithoModel::from_checkpoint(litho)?;
    let hash = check_manifest(opc, manifest, allow_manifest_mismatch)?;
    let loader = AuditedLoader::new(manifest);
    let (w, h) = (manifest.layout_spec.width, manifest.layout_spec.height);
    let mut rows = Vec::new();
    for e in manifest.split(split) {
        let layout = Raster::new(w, h, loader.layout(e)?.to_vec())?;
        let c = correct_and_verify(&k, &g, &layout, &e.param)?;
        rows.push(MetricsRow {
            id: e.id.clone(),
            param: e.param.primary(),
            iou: c.metrics.iou_corrected,
            ssim: c.metrics.ssim_corrected,
            pixel_error: c.metrics.err_corrected,
        });
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("split {split:?} is empty")));
    }
    Ok(MetricsReport::from_rows(split, hash, opc.manifest_hash.clone(), rows))
}
