// SPDX-License-Identifier: Apache-2.0

//! Training loops, checkpoints, prediction and evaluation.

mod adam;
mod checkpoint;
pub mod data;
mod eval;
mod history;
mod litho;
mod opc;

pub use adam::Adam;
pub use checkpoint::{sidecar_path, ModelCheckpoint, Role, CHECKPOINT_MAGIC};
pub use eval::{
    correct_and_verify, evaluate, evaluate_correction, predict_litho, score, Correction, CorrectionMetrics, LithoModel,
    MetricsReport, MetricsRow, OpcModel, Score,
};
pub use history::{LogRow, TrainingLog};
pub use litho::{train_lithonet, LithoTraining};
pub use opc::{train_opcnet, OpcTraining};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossWeights, MaskLossWeights};
use crate::nets::{GeneratorConfig, Head, RegressorConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_opc: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Regressor updates per generator update.
    pub d_steps: usize,
    pub loss_weights: LossWeights,
    pub mask_loss_weights: MaskLossWeights,
    pub seed: u64,
    /// Validate every this many epochs (and always after the last one).
    pub eval_interval: usize,
    pub generator_depth: usize,
    pub generator_base_channels: usize,
    pub d_max: f64,
    pub regressor_levels: usize,
    pub regressor_base_channels: usize,
    pub opc_depth: usize,
    pub opc_base_channels: usize,
    /// Train on the first N training layouts only.
    pub max_train_layouts: Option<usize>,
    pub max_val_layouts: Option<usize>,
    /// Random dihedral transform per sample and epoch.
    pub augment: bool,
    /// Training samples scored with the initial weights for the epoch-0 log row.
    pub initial_eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            lr_g: 2e-4,
            lr_d: 2e-4,
            lr_opc: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            d_steps: 1,
            loss_weights: LossWeights::default(),
            mask_loss_weights: MaskLossWeights::default(),
            seed: 0,
            eval_interval: 1,
            generator_depth: 4,
            generator_base_channels: 16,
            d_max: 8.0,
            regressor_levels: 4,
            regressor_base_channels: 16,
            opc_depth: 4,
            opc_base_channels: 16,
            max_train_layouts: None,
            max_val_layouts: None,
            augment: false,
            initial_eval_samples: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("d_steps", self.d_steps),
            ("eval_interval", self.eval_interval),
            ("generator_depth", self.generator_depth),
            ("generator_base_channels", self.generator_base_channels),
            ("regressor_levels", self.regressor_levels),
            ("regressor_base_channels", self.regressor_base_channels),
            ("opc_depth", self.opc_depth),
            ("opc_base_channels", self.opc_base_channels),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("lr_opc", self.lr_opc),
            ("eps", self.eps),
            ("d_max", self.d_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.max_train_layouts == Some(0) {
            return Err(Error::Config("max_train_layouts must be positive".into()));
        }
        self.loss_weights.validate()?;
        self.mask_loss_weights.validate()
    }

    pub fn generator_config(&self, param_dim: usize) -> GeneratorConfig {
        GeneratorConfig {
            param_dim,
            head: Head::Deformation { d_max: self.d_max },
            depth: self.generator_depth,
            base_channels: self.generator_base_channels,
        }
    }

    pub fn regressor_config(&self, param_dim: usize) -> RegressorConfig {
        RegressorConfig {
            param_dim,
            levels: self.regressor_levels,
            base_channels: self.regressor_base_channels,
        }
    }

    pub fn opc_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            param_dim: 0,
            head: Head::Mask,
            depth: self.opc_depth,
            base_channels: self.opc_base_channels,
        }
    }
}

// Independent random streams derived from the one configured seed.
pub(crate) const SALT_INIT_G: u64 = 0x11;
pub(crate) const SALT_INIT_D: u64 = 0x22;
pub(crate) const SALT_ORDER: u64 = 0x33;
pub(crate) const SALT_INIT_K: u64 = 0x44;

pub(crate) fn stream(seed: u64, salt: u64) -> rand_chacha::ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(crate::layoutgen::sample_seed(seed, salt))
}
