//! Run configuration: one JSON document, every field optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use selex::bssk::BsskConfig;
use selex::hssk::HsskConfig;
use selex::loss::{LossConfig, TargetSource};
use selex::targets::{Normalization, SmoothingConfig};
use selex::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BsskSection {
    /// Defaults to `floor(N / k)`.
    pub cluster_size: Option<usize>,
    pub n_iter_refine: usize,
    pub n_iter_final: usize,
    pub balanced: bool,
}

impl Default for BsskSection {
    fn default() -> Self {
        let d = BsskConfig::new(1);
        Self { cluster_size: None, n_iter_refine: d.n_iter_refine, n_iter_final: d.n_iter_final, balanced: d.balanced }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HsskSection {
    pub prototype_iters: usize,
}

impl Default for HsskSection {
    fn default() -> Self {
        Self { prototype_iters: HsskConfig::default().prototype_iters }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingSection {
    pub alpha: f64,
    pub normalization: Normalization,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        let d = SmoothingConfig::default();
        Self { alpha: d.alpha, normalization: d.normalization }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f64,
    pub tau_unsup: f64,
    pub tau_sup: f64,
    pub eps: f64,
    pub target: TargetSource,
    pub symmetrize: bool,
    pub use_raw_target: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossConfig::default();
        Self {
            lambda: d.lambda,
            tau_unsup: d.tau_unsup,
            tau_sup: d.tau_sup,
            eps: d.eps,
            target: d.target,
            symmetrize: d.symmetrize,
            use_raw_target: d.use_raw_target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub backoff: bool,
    pub max_backoff: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::new(1);
        Self {
            epochs: d.epochs,
            steps_per_epoch: d.steps_per_epoch,
            learning_rate: d.learning_rate,
            backoff: d.backoff,
            max_backoff: d.max_backoff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Score only rows without a ground-truth label in the input.
    pub unlabeled_only: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { unlabeled_only: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingFormat {
    #[default]
    Selx,
    Csv,
}

impl EmbeddingFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Selx => "selx",
            Self::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    /// Format written by `synth` and `train`.
    pub embedding_format: EmbeddingFormat,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub bssk: BsskSection,
    pub hssk: HsskSection,
    pub smoothing: SmoothingSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub io: IoSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::from_json(&crate::io::read_text(p)?),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.loss_config().validate()?;
        if !(self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite()) {
            return Err(CliError::Validation(format!(
                "train.learning_rate {} must be positive",
                self.train.learning_rate
            )));
        }
        if self.bssk.cluster_size == Some(0) {
            return Err(CliError::Validation("bssk.cluster_size must be positive".into()));
        }
        Ok(())
    }

    pub fn bssk_config(&self, k: usize, seed: u64) -> BsskConfig {
        BsskConfig {
            k,
            cluster_size: self.bssk.cluster_size,
            n_iter_refine: self.bssk.n_iter_refine,
            n_iter_final: self.bssk.n_iter_final,
            balanced: self.bssk.balanced,
            seed,
        }
    }

    pub fn hssk_config(&self) -> HsskConfig {
        HsskConfig { prototype_iters: self.hssk.prototype_iters }
    }

    pub fn smoothing_config(&self) -> SmoothingConfig {
        SmoothingConfig { alpha: self.smoothing.alpha, normalization: self.smoothing.normalization }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.loss.lambda,
            tau_unsup: self.loss.tau_unsup,
            tau_sup: self.loss.tau_sup,
            eps: self.loss.eps,
            smoothing: self.smoothing_config(),
            target: self.loss.target,
            symmetrize: self.loss.symmetrize,
            use_raw_target: self.loss.use_raw_target,
        }
    }

    pub fn train_config(&self, k: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            steps_per_epoch: self.train.steps_per_epoch,
            learning_rate: self.train.learning_rate,
            backoff: self.train.backoff,
            max_backoff: self.train.max_backoff,
            loss: self.loss_config(),
            bssk: self.bssk_config(k, seed),
            hssk: self.hssk_config(),
            seed,
        }
    }
}
