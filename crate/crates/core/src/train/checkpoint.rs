// SPDX-License-Identifier: Apache-2.0

//! Binary checkpoint format:
//!
//! ```text
//! magic        8 bytes  "VMLCKPT1"
//! header_len   u64 LE
//! header       header_len bytes of JSON (role, configs, train config,
//!              manifest hash, parameter grid, epoch, validation IOU,
//!              array count)
//! arrays       repeated in fixed order:
//!                name_len u32 LE, name UTF-8,
//!                ndim u32 LE, dims u64 LE each,
//!                values f64 LE, one per element
//! ```
//!
//! Generator arrays come first, prefixed `generator/`, then regressor arrays
//! prefixed `regressor/`. A sidecar `<file>.json` repeats the header plus
//! parameter hashes for inspection.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nets::{Generator, GeneratorConfig, ParamSpec, ParamStore, Regressor, RegressorConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VMLCKPT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Lithonet,
    Opcnet,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Lithonet => "lithonet",
            Role::Opcnet => "opcnet",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub role: Role,
    pub generator_config: GeneratorConfig,
    pub generator: ParamStore<f32>,
    /// Present for the deformation model only.
    pub regressor_config: Option<RegressorConfig>,
    pub regressor: Option<ParamStore<f32>>,
    pub train_config: TrainConfig,
    pub manifest_hash: String,
    /// Parameter settings seen in training.
    pub param_grid: Vec<Vec<f64>>,
    pub epoch: usize,
    pub val_iou: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    role: Role,
    generator: GeneratorConfig,
    regressor: Option<RegressorConfig>,
    train_config: TrainConfig,
    manifest_hash: String,
    param_grid: Vec<Vec<f64>>,
    epoch: usize,
    val_iou: Option<f64>,
    arrays: usize,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    #[serde(flatten)]
    header: &'a Header,
    generator_hash: String,
    regressor_hash: Option<String>,
    num_values: usize,
}

const GEN_PREFIX: &str = "generator/";
const REG_PREFIX: &str = "regressor/";

/// Path of the JSON sidecar written next to a checkpoint.
pub fn sidecar_path(path: impl AsRef<Path>) -> PathBuf {
    let mut s = path.as_ref().as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl ModelCheckpoint {
    pub fn require_role(&self, role: Role) -> Result<()> {
        if self.role == role {
            Ok(())
        } else {
            Err(Error::RoleMismatch {
                expected: role.to_string(),
                found: self.role.to_string(),
            })
        }
    }

    fn header(&self) -> Header {
        Header {
            role: self.role,
            generator: self.generator_config,
            regressor: self.regressor_config,
            train_config: self.train_config.clone(),
            manifest_hash: self.manifest_hash.clone(),
            param_grid: self.param_grid.clone(),
            epoch: self.epoch,
            val_iou: self.val_iou,
            arrays: self.generator.len() + self.regressor.as_ref().map_or(0, |r| r.len()),
        }
    }

    fn named_arrays(&self) -> Vec<(String, &ParamSpec, &[f32])> {
        let mut out = Vec::new();
        for (spec, (_, vals)) in self.generator.specs().iter().zip(self.generator.arrays()) {
            out.push((format!("{GEN_PREFIX}{}", spec.name), spec, vals));
        }
        if let Some(r) = &self.regressor {
            for (spec, (_, vals)) in r.specs().iter().zip(r.arrays()) {
                out.push((format!("{REG_PREFIX}{}", spec.name), spec, vals));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.generator.num_values());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, spec, vals) in self.named_arrays() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(spec.shape.len() as u32).to_le_bytes());
            for d in &spec.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in vals {
                out.extend_from_slice(&(*v as f64).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)?;
        let generator = Generator::new(header.generator)?;
        let regressor = header.regressor.map(Regressor::new).transpose()?;
        let expected_arrays = generator.specs().len() + regressor.as_ref().map_or(0, |d| d.specs().len());
        if header.arrays != expected_arrays {
            return Err(Error::format(
                "checkpoint",
                format!(
                    "header lists {} arrays, architecture has {expected_arrays}",
                    header.arrays
                ),
            ));
        }
        let gen_params = read_store(&mut r, generator.specs(), GEN_PREFIX)?;
        let reg_params = match &regressor {
            Some(d) => Some(read_store(&mut r, d.specs(), REG_PREFIX)?),
            None => None,
        };
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(ModelCheckpoint {
            role: header.role,
            generator_config: header.generator,
            generator: gen_params,
            regressor_config: header.regressor,
            regressor: reg_params,
            train_config: header.train_config,
            manifest_hash: header.manifest_hash,
            param_grid: header.param_grid,
            epoch: header.epoch,
            val_iou: header.val_iou,
        })
    }

    /// Writes the checkpoint and its sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&bytes)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))?;
        let header = self.header();
        let side = Sidecar {
            header: &header,
            generator_hash: self.generator.hash(),
            regressor_hash: self.regressor.as_ref().map(|r| r.hash()),
            num_values: self.generator.num_values() + self.regressor.as_ref().map_or(0, |r| r.num_values()),
        };
        let sp = sidecar_path(path);
        fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&sp, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { what, detail } => Error::Format {
                what,
                detail: format!("{}: {detail}", path.display()),
            },
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn read_store(r: &mut Reader, specs: &[ParamSpec], prefix: &str) -> Result<ParamStore<f32>> {
    let mut arrays = Vec::with_capacity(specs.len());
    for spec in specs {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format("checkpoint", "array name is not UTF-8"))?;
        let local = name
            .strip_prefix(prefix)
            .ok_or_else(|| Error::format("checkpoint", format!("unexpected array {name}")))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != spec.shape {
            return Err(Error::format(
                "checkpoint",
                format!("array {name} has shape {shape:?}, expected {:?}", spec.shape),
            ));
        }
        let mut vals = Vec::with_capacity(spec.len());
        for _ in 0..spec.len() {
            let v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            vals.push(v as f32);
        }
        arrays.push((local.to_string(), vals));
    }
    ParamStore::from_arrays(specs, arrays).map_err(|e| Error::format("checkpoint", e))
}
