// SPDX-License-Identifier: Apache-2.0

//! Dataset loading with an I/O audit trail, and dihedral augmentation.

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::PathBuf;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::layoutgen::{DatasetManifest, ManifestEntry, Split};
use crate::raster::{load_binary, BinaryRaster};

/// Reads dataset images through one place and records every opened path.
pub struct AuditedLoader<'a> {
    manifest: &'a DatasetManifest,
    opened: RefCell<Vec<PathBuf>>,
    layouts: RefCell<HashMap<String, Rc<Vec<f64>>>>,
}

impl<'a> AuditedLoader<'a> {
    pub fn new(manifest: &'a DatasetManifest) -> Self {
        AuditedLoader {
            manifest,
            opened: RefCell::new(Vec::new()),
            layouts: RefCell::new(HashMap::new()),
        }
    }

    pub fn manifest(&self) -> &DatasetManifest {
        self.manifest
    }

    fn read(&self, rel: &str) -> Result<BinaryRaster> {
        let path = self.manifest.resolve(rel);
        self.opened.borrow_mut().push(path.clone());
        let r = load_binary(&path)?;
        let spec = &self.manifest.layout_spec;
        crate::error::check_dims((spec.width, spec.height), r.dims())?;
        Ok(r)
    }

    /// Layout plane of `entry`; each layout file is read once.
    pub fn layout(&self, entry: &ManifestEntry) -> Result<Rc<Vec<f64>>> {
        if let Some(p) = self.layouts.borrow().get(&entry.id) {
            return Ok(p.clone());
        }
        let plane = Rc::new(self.read(&entry.layout_path)?.to_raster().into_pixels());
        self.layouts.borrow_mut().insert(entry.id.clone(), plane.clone());
        Ok(plane)
    }

    pub fn ground_truth(&self, entry: &ManifestEntry) -> Result<Vec<f64>> {
        Ok(self.read(&entry.gt_path)?.to_raster().into_pixels())
    }

    /// Every path opened so far, in order.
    pub fn opened(&self) -> Vec<PathBuf> {
        self.opened.borrow().clone()
    }
}

/// One supervised example held in memory.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub param_index: usize,
    pub param: Vec<f64>,
    pub layout: Rc<Vec<f64>>,
    pub target: Vec<f64>,
}

/// Distinct layout ids of `split` in manifest order, truncated to `limit`.
pub fn split_layouts(m: &DatasetManifest, split: Split, limit: Option<usize>) -> Vec<String> {
    let ids = m.layout_ids(split);
    let n = limit.map_or(ids.len(), |l| l.min(ids.len()));
    ids[..n].iter().map(|s| s.to_string()).collect()
}

/// Layout and ground truth of every parameter setting of `ids`.
pub fn load_supervised(loader: &AuditedLoader, split: Split, ids: &[String]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for e in loader.manifest().split(split) {
        if !ids.contains(&e.id) {
            continue;
        }
        let wrap = |err: Error| Error::Sample {
            id: e.id.clone(),
            source: Box::new(err),
        };
        out.push(Sample {
            id: e.id.clone(),
            param_index: e.param_index,
            param: e.param.components().to_vec(),
            layout: loader.layout(e).map_err(wrap)?,
            target: loader.ground_truth(e).map_err(wrap)?,
        });
    }
    Ok(out)
}

/// Layout planes only, one per id.
pub fn load_layouts(loader: &AuditedLoader, split: Split, ids: &[String]) -> Result<Vec<(String, Rc<Vec<f64>>)>> {
    let mut out: Vec<(String, Rc<Vec<f64>>)> = Vec::new();
    for e in loader.manifest().split(split) {
        if !ids.contains(&e.id) || out.iter().any(|(id, _)| *id == e.id) {
            continue;
        }
        out.push((e.id.clone(), loader.layout(e)?));
    }
    Ok(out)
}

/// Number of dihedral transforms available for a `w x h` grid: all eight
/// for square grids, the four flips otherwise.
pub fn transform_count(w: usize, h: usize) -> usize {
    if w == h {
        8
    } else {
        4
    }
}

/// Applies transform `k`: bit 0 mirrors x, bit 1 mirrors y, bit 2 transposes
/// (square grids only) after the mirrors.
pub fn dihedral(plane: &[f64], w: usize, h: usize, k: usize) -> Vec<f64> {
    assert!(k < transform_count(w, h), "transform {k} unavailable on {w}x{h}");
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let sx = if k & 1 != 0 { w - 1 - x } else { x };
            let sy = if k & 2 != 0 { h - 1 - y } else { y };
            let (ox, oy) = if k & 4 != 0 { (y, x) } else { (x, y) };
            out[oy * w + ox] = plane[sy * w + sx];
        }
    }
    out
}
