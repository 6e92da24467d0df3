use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Pipeline, Protocol, RotationMode, TrainConfig, TrainError};
use crate::geometry::{apply_rotation, RotationMatrix};
use crate::ingest::LabeledCloud;
use crate::seed::seed_from_key;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: usize,
    pub total: usize,
    pub correct: usize,
    /// `None` when the class has no test examples.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub variant: String,
    pub fusion: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: TrainConfig,
    pub overall_accuracy: f64,
    pub evaluated: usize,
    /// Clouds dropped by the degenerate policy.
    pub skipped: usize,
    pub per_class: Vec<ClassAccuracy>,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text summary.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "protocol    {}", self.protocol);
        let _ = writeln!(out, "variant     {} ({})", self.variant, self.fusion);
        let _ = writeln!(out, "config      {}  seed {}", self.config_hash, self.seed);
        let _ = writeln!(
            out,
            "evaluated   {}  skipped {}",
            self.evaluated, self.skipped
        );
        let _ = writeln!(out, "accuracy    {:.4}", self.overall_accuracy);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:>5}  {:>7}  {:>7}  {:>8}",
            "class", "correct", "total", "accuracy"
        );
        for c in &self.per_class {
            let acc = c.accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(
                out,
                "{:>5}  {:>7}  {:>7}  {:>8}",
                c.label, c.correct, c.total, acc
            );
        }
        out
    }
}

/// The test-time rotation of one example: freshly drawn per example but
/// derived from its id, so every protocol sees the same draw for a given seed.
pub fn example_rotation(mode: RotationMode, seed: u64, id: &str) -> RotationMatrix {
    mode.sample(&mut ChaCha8Rng::seed_from_u64(seed_from_key(seed, id)))
}

/// Rotates every test cloud per `protocol.test` and scores the pipeline's
/// argmax predictions.
pub fn evaluate(
    pipeline: &Pipeline,
    data: &[LabeledCloud],
    protocol: Protocol,
    seed: u64,
) -> Result<EvalReport, TrainError> {
    let classes = pipeline.model.spec().classes;
    if let Some(bad) = data.iter().find(|c| c.label >= classes) {
        return Err(TrainError::Data(format!(
            "example '{}' has label {} but the model has {classes} classes",
            bad.id, bad.label
        )));
    }
    if !pipeline.variant().rotation_invariant() && pipeline.config.train_rotation != protocol.train
    {
        log::warn!(
            "protocol {protocol} expects {} training rotations but the model was trained with {}",
            protocol.train,
            pipeline.config.train_rotation
        );
    }
    let outcomes: Vec<Option<Prediction>> = data
        .par_iter()
        .map(|c| {
            let r = example_rotation(protocol.test, seed, &c.id);
            let rotated = apply_rotation(&r, &c.cloud);
            Ok(pipeline.predict(&rotated)?.map(|predicted| Prediction {
                id: c.id.clone(),
                label: c.label,
                predicted,
            }))
        })
        .collect::<Result<_, TrainError>>()?;
    let skipped = outcomes.iter().filter(|o| o.is_none()).count();
    let predictions: Vec<Prediction> = outcomes.into_iter().flatten().collect();
    let mut per_class: Vec<ClassAccuracy> = (0..classes)
        .map(|label| ClassAccuracy {
            label,
            total: 0,
            correct: 0,
            accuracy: None,
        })
        .collect();
    for p in &predictions {
        per_class[p.label].total += 1;
        per_class[p.label].correct += usize::from(p.label == p.predicted);
    }
    for c in per_class.iter_mut() {
        c.accuracy = (c.total > 0).then(|| c.correct as f64 / c.total as f64);
    }
    let correct: usize = per_class.iter().map(|c| c.correct).sum();
    let config = pipeline.config.clone();
    Ok(EvalReport {
        protocol: protocol.to_string(),
        variant: config.variant.clone(),
        fusion: pipeline.model.spec().fusion.clone(),
        seed,
        config_hash: config.hash(),
        overall_accuracy: if predictions.is_empty() {
            0.0
        } else {
            correct as f64 / predictions.len() as f64
        },
        evaluated: predictions.len(),
        skipped,
        per_class,
        predictions,
        config,
    })
}
