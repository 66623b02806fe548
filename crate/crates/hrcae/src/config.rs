//! Declarative run configuration (JSON). Missing fields take the library
//! defaults.

use std::path::{Path, PathBuf};

use hrcae_core::eval::{Aggregation, AttrFit, EvalMode};
use hrcae_core::nets::{ArchConfig, Family};
use hrcae_core::segment::SegmentPolicy;
use hrcae_core::synth::GeneratorConfig;
use hrcae_core::train::{ContrastiveParams, LossKind, TrainSchedule};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::read_json;

/// Environment variable overriding `cache_dir`.
pub const CACHE_ENV: &str = "HRCAE_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { data_dir: "data".into(), cache_dir: "cache".into(), output_dir: "out".into() }
    }
}

/// Model, objective and evaluation of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Experiment {
    pub model: ArchConfig,
    /// Defaults to the family's own objective.
    pub loss: Option<LossKind>,
    /// Defaults to reconstruction error for auto-encoders and logits
    /// otherwise.
    pub eval_mode: Option<EvalMode>,
    pub pretrain: TrainSchedule,
    pub finetune: TrainSchedule,
    pub attr: AttrFit,
    pub aggregation: Aggregation,
}

impl Default for Experiment {
    fn default() -> Self {
        Self::for_family(Family::ContrastiveCae, 4)
    }
}

impl Experiment {
    pub fn for_family(family: Family, num_layers: usize) -> Self {
        Self {
            model: ArchConfig::new(family, num_layers),
            loss: None,
            eval_mode: None,
            pretrain: TrainSchedule::default(),
            finetune: TrainSchedule::default(),
            attr: AttrFit::default(),
            aggregation: Aggregation::Micro,
        }
    }

    pub fn loss(&self) -> LossKind {
        self.loss.unwrap_or(match self.model.family {
            Family::ContrastiveCae => {
                LossKind::Contrastive(ContrastiveParams { margin: self.model.margin, per_sample: false })
            }
            Family::Cae => LossKind::Rmse,
            Family::Cnn | Family::Mlp => LossKind::CrossEntropy,
        })
    }

    pub fn eval_mode(&self) -> EvalMode {
        self.eval_mode.unwrap_or(if self.model.family.is_autoencoder() { EvalMode::ReconError } else { EvalMode::CnnLogits })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        let ok = match (self.model.family, self.loss()) {
            (Family::Cae | Family::ContrastiveCae, LossKind::Rmse | LossKind::Contrastive(_)) => true,
            (Family::Cnn | Family::Mlp, LossKind::CrossEntropy) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::Invalid(format!("loss {:?} does not fit family {}", self.loss(), self.model.family.name())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub generator: GeneratorConfig,
    pub segment: SegmentPolicy,
    pub experiment: Experiment,
    pub scan_shifts: Vec<i32>,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            generator: GeneratorConfig::default(),
            segment: SegmentPolicy::default(),
            experiment: Experiment::default(),
            scan_shifts: (-3..=5).collect(),
            seed: 0,
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Applies the cache-directory environment override.
    pub fn with_env(mut self) -> Self {
        if let Some(dir) = std::env::var_os(CACHE_ENV) {
            self.paths.cache_dir = dir.into();
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        if !(0.0..=1.0).contains(&self.segment.min_completeness) {
            return Err(Error::Invalid("min_completeness must lie in [0, 1]".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Invalid("jobs must be at least 1".into()));
        }
        Ok(())
    }
}
