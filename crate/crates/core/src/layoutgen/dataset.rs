// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate_layout, sample_seed, LayoutSpec};
use crate::error::{Error, Result};
use crate::faboracle::{simulate, FabParam, OracleConfig};
use crate::raster::save_binary;

pub const MANIFEST_FILE: &str = "manifest.json";

// Keeps the split shuffle stream apart from the per-sample streams.
const SPLIT_SALT: u64 = 0x5eed_5911_7000_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Layout id; shared by every parameter setting of the same layout.
    pub id: String,
    pub layout_path: String,
    pub gt_path: String,
    pub param: FabParam,
    pub param_index: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub layout_spec: LayoutSpec,
    pub oracle_config: OracleConfig,
    pub params: Vec<FabParam>,
    pub entries: Vec<ManifestEntry>,
    /// Directory the relative paths resolve against; set on load.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path = path.join(MANIFEST_FILE);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Distinct layout ids of a split, in manifest order.
    pub fn layout_ids(&self, split: Split) -> Vec<&str> {
        let mut seen = Vec::new();
        for e in self.split(split) {
            if seen.last() != Some(&e.id.as_str()) && !seen.contains(&e.id.as_str()) {
                seen.push(e.id.as_str());
            }
        }
        seen
    }

    /// Layout counts per split.
    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut out = BTreeMap::new();
        for s in [Split::Train, Split::Val, Split::Test] {
            out.insert(s, self.layout_ids(s).len());
        }
        out
    }

    pub fn param_dim(&self) -> usize {
        self.params.first().map_or(1, FabParam::dim)
    }
}

/// Splits `n` layouts 80/10/10; validation and test each get at least one
/// layout once there are three or more.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    let held = (n / 10).max(1);
    (n - 2 * held, held, held)
}

pub fn build_dataset(
    spec: &LayoutSpec,
    oracle: &OracleConfig,
    params: &[FabParam],
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<DatasetManifest> {
    spec.validate()?;
    oracle.validate()?;
    if params.is_empty() {
        return Err(Error::Config("at least one fabrication parameter is required".into()));
    }
    if params.iter().any(|p| p.dim() != params[0].dim()) {
        return Err(Error::Config("fabrication parameters differ in dimension".into()));
    }
    let out_dir = out_dir.as_ref();
    for sub in ["layouts", "gt"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let n = spec.count;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let (n_train, n_val, _) = split_sizes(n);
    let mut split_of = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        split_of[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let mut entries = Vec::with_capacity(n * params.len());
    for (i, &split) in split_of.iter().enumerate() {
        let id = format!("L{i:05}");
        let wrap = |e: Error| Error::Sample {
            id: id.clone(),
            source: Box::new(e),
        };
        let layout = generate_layout(spec, sample_seed(seed, i as u64)).map_err(wrap)?;
        let layout_rel = format!("layouts/{id}.png");
        save_binary(&layout, out_dir.join(&layout_rel)).map_err(wrap)?;
        for (k, p) in params.iter().enumerate() {
            let gt = simulate(&layout, p, oracle);
            let gt_rel = format!("gt/{id}_{k}.png");
            save_binary(&gt, out_dir.join(&gt_rel)).map_err(wrap)?;
            entries.push(ManifestEntry {
                id: id.clone(),
                layout_path: layout_rel.clone(),
                gt_path: gt_rel,
                param: p.clone(),
                param_index: k,
                split,
            });
        }
    }

    let manifest = DatasetManifest {
        seed,
        layout_spec: spec.clone(),
        oracle_config: oracle.clone(),
        params: params.to_vec(),
        entries,
        root: out_dir.to_path_buf(),
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// SHA-256 of the manifest file, hex encoded.
pub fn manifest_hash(path: impl AsRef<Path>) -> Result<String> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(MANIFEST_FILE);
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
