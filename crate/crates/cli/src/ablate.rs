// SPDX-License-Identifier: Apache-2.0

//! Loss-setting grid: four deformation-model settings and three corrector
//! settings, each trained and scored on the validation split.

use std::path::Path;

use serde::Serialize;
use vmlitho::layoutgen::{manifest_hash, DatasetManifest, Split};
use vmlitho::train::{evaluate, evaluate_correction, train_lithonet, train_opcnet, MetricsReport, ModelCheckpoint};

use crate::config::{ablate, Resolved, RunConfig};
use crate::{apply_flags, create_dir, required, AblateArgs, CliError, LITHO_CKPT, OPC_CKPT, TRAIN_LOG};

/// Deformation-model settings and the loss terms each one switches off.
pub const LITHO_SETTINGS: [(&str, &[&str]); 4] = [
    ("full", &[]),
    ("-var", &["var"]),
    ("-smooth", &["smooth"]),
    ("-var-smooth", &["var", "smooth"]),
];

/// Corrector settings and the loss terms each one switches off.
pub const OPC_SETTINGS: [(&str, &[&str]); 3] = [
    ("io", &["kvar", "ksmooth"]),
    ("io+kvar", &["ksmooth"]),
    ("io+kvar+ksmooth", &[]),
];

pub const ABLATION_TABLE: &str = "ablation.csv";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub model: String,
    pub setting: String,
    pub avg_iou: Option<f64>,
    pub avg_ssim: Option<f64>,
    pub avg_error: Option<f64>,
    /// `ok`, or the error that stopped this setting.
    pub status: String,
}

impl AblationRow {
    fn new(model: &str, setting: &str, result: Result<MetricsReport, CliError>) -> Self {
        let (m, status) = match result {
            Ok(r) => (Some(r), "ok".to_string()),
            Err(e) => (None, format!("failed: {e}")),
        };
        AblationRow {
            model: model.into(),
            setting: setting.into(),
            avg_iou: m.as_ref().map(|r| r.mean_iou),
            avg_ssim: m.as_ref().map(|r| r.mean_ssim),
            avg_error: m.as_ref().map(|r| r.mean_pixel_error),
            status,
        }
    }
}

fn dir_name(model: &str, setting: &str) -> String {
    let s: String = setting
        .chars()
        .map(|c| match c {
            '-' => 'n',
            '+' => 'p',
            c => c,
        })
        .collect();
    format!("{model}_{s}")
}

fn write_table(rows: &[AblationRow], path: &Path) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Usage(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["model", "setting", "avg_iou", "avg_ssim", "avg_error", "status"])
        .map_err(err)?;
    let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.setting.clone(),
            f(r.avg_iou),
            f(r.avg_ssim),
            f(r.avg_error),
            r.status.clone(),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn owned(terms: &[&str]) -> Vec<String> {
    terms.iter().map(|t| t.to_string()).collect()
}

pub(crate) fn cmd_ablate(a: AblateArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.flags.config.as_deref())?;
    let mut overrides = Vec::new();
    if a.small {
        cfg.train.max_train_layouts = Some(16);
        cfg.train.augment = true;
        overrides.push("small: train.max_train_layouts = 16, train.augment = true".into());
    }
    apply_flags(&mut cfg, &a.flags, &mut overrides)?;
    let data = required(a.data.or(cfg.data_dir.clone()), "--data")?;
    let out = required(a.out.or(cfg.out_dir.clone()), "--out")?;
    cfg.data_dir = Some(data.clone());
    cfg.out_dir = Some(out.clone());
    let manifest = DatasetManifest::load(&data)?;
    create_dir(&out)?;
    Resolved {
        command: "ablate",
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        overrides: &overrides,
        manifest_hash: Some(manifest_hash(&data)?),
    }
    .write(&out)?;

    let mut rows = Vec::new();
    let mut full_litho: Option<ModelCheckpoint> = None;
    for (setting, off) in LITHO_SETTINGS {
        let dir = out.join(dir_name("lithonet", setting));
        let result = (|| -> Result<MetricsReport, CliError> {
            let mut train = cfg.train.clone();
            ablate(&mut train, &owned(off))?;
            create_dir(&dir)?;
            let run = train_lithonet(&manifest, &train)?;
            run.log.write_csv(dir.join(TRAIN_LOG))?;
            run.checkpoint.save(dir.join(LITHO_CKPT))?;
            let report = evaluate(&run.checkpoint, &manifest, Split::Val, false)?;
            if off.is_empty() {
                full_litho = Some(run.checkpoint);
            }
            Ok(report)
        })();
        if let Err(e) = &result {
            log::error!("lithonet {setting}: {e}");
        }
        rows.push(AblationRow::new("lithonet", setting, result));
        write_table(&rows, &out.join(ABLATION_TABLE))?;
    }

    for (setting, off) in OPC_SETTINGS {
        let dir = out.join(dir_name("opcnet", setting));
        let result = (|| -> Result<MetricsReport, CliError> {
            let litho = full_litho
                .as_ref()
                .ok_or_else(|| CliError::Usage("no full-loss deformation model to train through".into()))?;
            let mut train = cfg.train.clone();
            ablate(&mut train, &owned(off))?;
            create_dir(&dir)?;
            let run = train_opcnet(&manifest, litho, &train)?;
            run.log.write_csv(dir.join(TRAIN_LOG))?;
            run.checkpoint.save(dir.join(OPC_CKPT))?;
            Ok(evaluate_correction(
                &run.checkpoint,
                litho,
                &manifest,
                Split::Val,
                false,
            )?)
        })();
        if let Err(e) = &result {
            log::error!("opcnet {setting}: {e}");
        }
        rows.push(AblationRow::new("opcnet", setting, result));
        write_table(&rows, &out.join(ABLATION_TABLE))?;
    }

    for r in &rows {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<9} {:<16} IOU {} SSIM {} error {} {}",
            r.model,
            r.setting,
            f(r.avg_iou),
            f(r.avg_ssim),
            f(r.avg_error),
            r.status
        );
    }
    Ok(())
}
