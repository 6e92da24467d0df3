//! Training and evaluation of the three model variants under the
//! rotation protocols z/z, SO3/SO3 and z/SO3.

mod checkpoint;
mod eval;
mod trainer;
pub mod variant;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::CanonicalError;
use crate::geometry::{random_azimuthal, random_rotation_so3, RotationMatrix};
use crate::ingest::IngestError;
use crate::neural::{NeuralError, FUSION_NAMES};
use crate::seed::short_hash;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use eval::{evaluate, example_rotation, ClassAccuracy, EvalReport, Prediction};
pub use trainer::{
    load_datasets, prepare_examples, synthetic_test_set, train, EpochStats, PreparedExample, Sgd,
    TrainedModel,
};
pub use variant::{variant_by_name, ModelVariant, Pipeline, VARIANT_NAMES};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("non-finite values after training step {step}")]
    Diverged { step: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Rotation regime applied to clouds on one side of a protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationMode {
    None,
    /// Uniform azimuth about the z axis.
    Z,
    /// Haar-uniform over SO(3).
    So3,
}

impl RotationMode {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> RotationMatrix {
        match self {
            RotationMode::None => RotationMatrix::identity(),
            RotationMode::Z => random_azimuthal(rng),
            RotationMode::So3 => random_rotation_so3(rng),
        }
    }
}

impl fmt::Display for RotationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RotationMode::None => "none",
            RotationMode::Z => "z",
            RotationMode::So3 => "SO3",
        })
    }
}

impl FromStr for RotationMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(RotationMode::None),
            "z" => Ok(RotationMode::Z),
            "so3" => Ok(RotationMode::So3),
            other => Err(TrainError::Config(format!(
                "unknown rotation mode '{other}' (none, z, so3)"
            ))),
        }
    }
}

/// Train/test rotation pair, written `train/test`, e.g. `z/SO3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Protocol {
    pub train: RotationMode,
    pub test: RotationMode,
}

impl Protocol {
    pub const Z_Z: Protocol = Protocol {
        train: RotationMode::Z,
        test: RotationMode::Z,
    };
    pub const SO3_SO3: Protocol = Protocol {
        train: RotationMode::So3,
        test: RotationMode::So3,
    };
    pub const Z_SO3: Protocol = Protocol {
        train: RotationMode::Z,
        test: RotationMode::So3,
    };
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.train, self.test)
    }
}

impl FromStr for Protocol {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once('/').ok_or_else(|| {
            TrainError::Config(format!(
                "protocol '{s}' must look like train/test, e.g. z/so3"
            ))
        })?;
        Ok(Protocol {
            train: a.parse()?,
            test: b.parse()?,
        })
    }
}

/// What to do with clouds whose covariance has tied eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    /// Drop the cloud from training and from evaluation counts.
    Skip,
    /// Keep the solver's deterministic basis and log a warning.
    #[default]
    UseSolverBasis,
}

/// Everything that determines a training run. `seed` has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::variant")]
    pub variant: String,
    /// Frame fusion for `multi_frame`; the other variants always use `single`.
    #[serde(default = "defaults::fusion")]
    pub fusion: String,
    pub seed: u64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    /// Multiplier applied every `lr_step` epochs.
    #[serde(default = "defaults::lr_decay")]
    pub lr_decay: f64,
    /// Epochs between decays; 0 keeps the rate constant.
    #[serde(default = "defaults::lr_step")]
    pub lr_step: usize,
    #[serde(default)]
    pub degenerate_policy: DegeneratePolicy,
    /// Augmentation for `baseline_raw`; ignored by the canonicalizing variants.
    #[serde(default = "defaults::train_rotation")]
    pub train_rotation: RotationMode,
    #[serde(default = "defaults::encoder_widths")]
    pub encoder_widths: Vec<usize>,
    #[serde(default = "defaults::classifier_hidden")]
    pub classifier_hidden: usize,
    /// JSON-lines manifest; the synthetic dataset is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_manifest: Option<String>,
    /// Points per cloud when sampling meshes or generating synthetic data.
    #[serde(default = "defaults::points")]
    pub points: usize,
    #[serde(default = "defaults::train_per_class")]
    pub train_per_class: usize,
    #[serde(default = "defaults::test_per_class")]
    pub test_per_class: usize,
    /// Seed of the synthetic data; defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
}

mod defaults {
    use super::RotationMode;

    pub fn variant() -> String {
        "multi_frame".into()
    }
    pub fn fusion() -> String {
        "attention-avg".into()
    }
    pub fn epochs() -> usize {
        30
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn learning_rate() -> f64 {
        0.01
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn lr_decay() -> f64 {
        0.5
    }
    pub fn lr_step() -> usize {
        10
    }
    pub fn train_rotation() -> RotationMode {
        RotationMode::Z
    }
    pub fn encoder_widths() -> Vec<usize> {
        vec![3, 64, 128, 256]
    }
    pub fn classifier_hidden() -> usize {
        128
    }
    pub fn points() -> usize {
        512
    }
    pub fn train_per_class() -> usize {
        200
    }
    pub fn test_per_class() -> usize {
        50
    }
}

impl TrainConfig {
    /// Default hyperparameters with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed })).expect("defaults deserialize")
    }

    /// Parses JSON (text starting with `{`) or `key = value` lines. Values
    /// in the latter form are read as JSON when they parse, else as strings;
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?
        } else {
            let mut map = serde_json::Map::new();
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    TrainError::Config(format!("line {}: expected key = value", i + 1))
                })?;
                let v = v.trim();
                let parsed = serde_json::from_str(v)
                    .unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
                if map.insert(k.trim().to_string(), parsed).is_some() {
                    return Err(TrainError::Config(format!(
                        "line {}: duplicate key '{}'",
                        i + 1,
                        k.trim()
                    )));
                }
            }
            serde_json::Value::Object(map)
        };
        let config: TrainConfig =
            serde_json::from_value(value).map_err(|e| TrainError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !VARIANT_NAMES.contains(&self.variant.as_str()) {
            return bad(format!(
                "unknown variant '{}' (known: {})",
                self.variant,
                VARIANT_NAMES.join(", ")
            ));
        }
        if !FUSION_NAMES.contains(&self.fusion.as_str()) {
            return bad(format!(
                "unknown fusion '{}' (known: {})",
                self.fusion,
                FUSION_NAMES.join(", ")
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if self.points < 3 {
            return bad(format!("points must be at least 3, got {}", self.points));
        }
        if self.classifier_hidden == 0 {
            return bad("classifier_hidden must be positive".into());
        }
        let w = &self.encoder_widths;
        if w.len() < 2 || w[0] != 3 || w.contains(&0) {
            return bad(format!(
                "encoder_widths must start at 3 and be positive, got {w:?}"
            ));
        }
        if self.train_manifest.is_none() && (self.train_per_class == 0 || self.test_per_class == 0)
        {
            return bad("synthetic train_per_class and test_per_class must be positive".into());
        }
        Ok(())
    }

    /// Fusion actually used by the variant.
    pub fn effective_fusion(&self) -> String {
        variant_by_name(&self.variant)
            .ok()
            .and_then(|v| v.fixed_fusion())
            .map(str::to_string)
            .unwrap_or_else(|| self.fusion.clone())
    }

    /// 16 hex characters of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
