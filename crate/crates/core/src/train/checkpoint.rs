use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Pipeline, TrainConfig, TrainError};
use crate::neural::{Model, ModelSpec, Tensor};

pub const CHECKPOINT_FORMAT: &str = "pcari-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned JSON container: config, its hash, the model spec and every
/// parameter tensor by name. Floats round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub spec: ModelSpec,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_pipeline(p: &Pipeline) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: p.config.hash(),
            seed: p.config.seed,
            config: p.config.clone(),
            spec: p.model.spec().clone(),
            tensors: p
                .model
                .params
                .named_tensors()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                })
                .collect(),
        }
    }

    pub fn into_pipeline(self) -> Result<Pipeline, TrainError> {
        let bad = |m: String| Err(TrainError::Checkpoint(m));
        if self.format != CHECKPOINT_FORMAT {
            return bad(format!("unknown format '{}'", self.format));
        }
        if self.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.config.hash() != self.config_hash {
            return bad("config hash does not match the stored config".into());
        }
        // initial values are placeholders; every tensor is overwritten below
        let mut params = Model::new(self.spec.clone(), &mut ChaCha8Rng::seed_from_u64(0))?.params;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.tensors.len() {
            return bad(format!(
                "expected {} tensors, found {}",
                names.len(),
                self.tensors.len()
            ));
        }
        for ((slot, name), stored) in params
            .tensors_mut()
            .into_iter()
            .zip(&names)
            .zip(self.tensors)
        {
            if *name != stored.name || slot.shape != stored.shape {
                return bad(format!(
                    "tensor '{}' {:?} does not match expected '{name}' {:?}",
                    stored.name, stored.shape, slot.shape
                ));
            }
            *slot = Tensor::from_vec(&stored.shape, stored.data)?;
            if !slot.is_finite() {
                return bad(format!("tensor '{name}' has non-finite values"));
            }
        }
        Pipeline::new(self.config, Model::from_params(self.spec, params)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        serde_json::from_str(text).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_json()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
