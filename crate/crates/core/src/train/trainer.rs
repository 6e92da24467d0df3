use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{variant_by_name, ModelVariant, Pipeline, TrainConfig, TrainError};
use crate::geometry::PointCloud;
use crate::ingest::{read_manifest, synthetic_dataset, LabeledCloud, MeshSampling, ShapeSpec};
use crate::neural::{backward, Example, Gradients, Model, ModelParams, ModelSpec};
use crate::seed::derive_seed;

/// Train and test sets named by the config. Manifest paths resolve against
/// `base_dir`; without a train manifest the synthetic five-class set is
/// generated, with the test half drawn from a separate seed.
pub fn load_datasets(
    config: &TrainConfig,
    base_dir: &Path,
) -> Result<(Vec<LabeledCloud>, Option<Vec<LabeledCloud>>), TrainError> {
    let data_seed = config.data_seed.unwrap_or(config.seed);
    match &config.train_manifest {
        Some(train) => {
            let sampling = MeshSampling {
                points: config.points,
                seed: data_seed,
            };
            let train_set = read_manifest(&base_dir.join(train), sampling)?;
            let test_set = match &config.test_manifest {
                Some(t) => Some(read_manifest(&base_dir.join(t), sampling)?),
                None => None,
            };
            Ok((train_set, test_set))
        }
        None => {
            let specs = ShapeSpec::default_classes();
            let train_set =
                synthetic_dataset(&specs, config.train_per_class, config.points, data_seed)?;
            Ok((train_set, Some(synthetic_test_set(config)?)))
        }
    }
}

/// The held-out half of the synthetic dataset a config describes.
pub fn synthetic_test_set(config: &TrainConfig) -> Result<Vec<LabeledCloud>, TrainError> {
    let data_seed = config.data_seed.unwrap_or(config.seed);
    Ok(synthetic_dataset(
        &ShapeSpec::default_classes(),
        config.test_per_class,
        config.points,
        derive_seed(data_seed, &[1]),
    )?)
}

/// A training cloud after the variant's one-off preprocessing.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub id: String,
    pub label: usize,
    pub views: Vec<PointCloud>,
}

/// Runs the variant's preprocessing over a dataset in parallel. Returns the
/// kept examples and the number dropped by the degenerate policy.
pub fn prepare_examples(
    variant: &dyn ModelVariant,
    config: &TrainConfig,
    data: &[LabeledCloud],
) -> Result<(Vec<PreparedExample>, usize), TrainError> {
    let prepared: Vec<Option<PreparedExample>> = data
        .par_iter()
        .map(|c| {
            Ok(variant
                .prepare(&c.cloud, config.degenerate_policy)?
                .map(|views| PreparedExample {
                    id: c.id.clone(),
                    label: c.label,
                    views,
                }))
        })
        .collect::<Result<_, TrainError>>()?;
    let skipped = prepared.iter().filter(|p| p.is_none()).count();
    Ok((prepared.into_iter().flatten().collect(), skipped))
}

/// Stochastic gradient descent with heavy-ball momentum:
/// `v ← μv − η∇`, `θ ← θ + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    velocity: ModelParams,
}

impl Sgd {
    pub fn new(params: &ModelParams, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, learning_rate: f64) {
        let g: Vec<&[f64]> = grads
            .named_tensors()
            .into_iter()
            .map(|(_, t)| t.data.as_slice())
            .collect();
        for ((p, v), g) in params
            .tensors_mut()
            .into_iter()
            .zip(self.velocity.tensors_mut())
            .zip(g)
        {
            for ((pi, vi), gi) in p.data.iter_mut().zip(v.data.iter_mut()).zip(g) {
                *vi = self.momentum * *vi - learning_rate * gi;
                *pi += *vi;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub examples: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub pipeline: Pipeline,
    pub history: Vec<EpochStats>,
    /// Training clouds dropped by the degenerate policy.
    pub skipped: usize,
}

fn class_count(data: &[LabeledCloud]) -> Result<usize, TrainError> {
    let classes = data.iter().map(|c| c.label).max().map_or(0, |m| m + 1);
    let mut seen = vec![false; classes];
    for c in data {
        seen[c.label] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(TrainError::Data(
            "training data must contain at least two classes".into(),
        ));
    }
    Ok(classes)
}

/// Trains the configured variant. Bit-reproducible for a fixed config:
/// every random draw comes from a seed derived from the config seed and
/// the position in the run, and gradients are reduced in a fixed order.
pub fn train(config: &TrainConfig, data: &[LabeledCloud]) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    let variant = variant_by_name(&config.variant)?;
    let classes = class_count(data)?;
    let spec = ModelSpec {
        encoder_widths: config.encoder_widths.clone(),
        classifier_hidden: config.classifier_hidden,
        classes,
        fusion: config.effective_fusion(),
    };
    let mut model = Model::new(
        spec,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0])),
    )?;
    let (examples, skipped) = prepare_examples(variant.as_ref(), config, data)?;
    if skipped > 0 {
        log::warn!("skipped {skipped} degenerate training clouds");
    }
    if examples.is_empty() {
        return Err(TrainError::Data(
            "no training examples left after preprocessing".into(),
        ));
    }
    let mut opt = Sgd::new(&model.params, config.momentum);
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let lr = match config.lr_step {
            0 => config.learning_rate,
            s => config.learning_rate * config.lr_decay.powi((epoch / s) as i32),
        };
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            &[1, epoch as u64],
        )));
        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(config.batch_size) {
            let views: Vec<_> = batch_idx
                .iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        config.seed,
                        &[2, epoch as u64, i as u64],
                    ));
                    variant.training_views(&examples[i].views, config.train_rotation, &mut rng)
                })
                .collect();
            let batch: Vec<Example> = views
                .iter()
                .zip(batch_idx)
                .map(|(v, &i)| Example {
                    views: v.iter().map(|c| c.as_ref()).collect(),
                    label: examples[i].label,
                })
                .collect();
            let (loss, grads) = backward(&model, &batch);
            opt.step(&mut model.params, &grads, lr);
            step += 1;
            if !loss.is_finite() || !model.params.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            loss_sum += loss * batch.len() as f64;
        }
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            mean_loss: loss_sum / examples.len() as f64,
            examples: examples.len(),
        };
        log::info!(
            "epoch {} lr {:.5} loss {:.5}",
            epoch + 1,
            lr,
            stats.mean_loss
        );
        history.push(stats);
    }
    Ok(TrainedModel {
        pipeline: Pipeline::new(config.clone(), model)?,
        history,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(variant: &str) -> TrainConfig {
        let mut c = TrainConfig::with_seed(3);
        c.variant = variant.into();
        c.epochs = 2;
        c.batch_size = 8;
        c.encoder_widths = vec![3, 8, 16];
        c.classifier_hidden = 8;
        c.points = 48;
        c
    }

    #[test]
    fn runs_are_bit_identical() {
        let data = synthetic_dataset(&ShapeSpec::default_classes(), 4, 48, 1).unwrap();
        for v in ["multi_frame", "single_frame", "baseline_raw"] {
            let a = train(&tiny_config(v), &data).unwrap();
            let b = train(&tiny_config(v), &data).unwrap();
            assert_eq!(a.pipeline.model.params, b.pipeline.model.params, "{v}");
            assert_eq!(a.history, b.history);
            assert_eq!(a.history.len(), 2);
        }
    }

    #[test]
    fn one_thread_matches_default_pool() {
        let data = synthetic_dataset(&ShapeSpec::default_classes(), 3, 48, 2).unwrap();
        let cfg = tiny_config("multi_frame");
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let one = pool.install(|| train(&cfg, &data).unwrap());
        let many = train(&cfg, &data).unwrap();
        assert_eq!(one.pipeline.model.params, many.pipeline.model.params);
    }

    #[test]
    fn rejects_single_class_data() {
        let data: Vec<LabeledCloud> = synthetic_dataset(&ShapeSpec::default_classes(), 2, 16, 1)
            .unwrap()
            .into_iter()
            .filter(|c| c.label == 0)
            .collect();
        assert!(matches!(
            train(&tiny_config("multi_frame"), &data),
            Err(TrainError::Data(_))
        ));
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let data = synthetic_dataset(&ShapeSpec::default_classes(), 1, 16, 1).unwrap();
        let cfg = tiny_config("baseline_raw");
        let model = Model::new(
            ModelSpec {
                encoder_widths: cfg.encoder_widths.clone(),
                classifier_hidden: 4,
                classes: 5,
                fusion: "single".into(),
            },
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let batch = vec![Example {
            views: vec![&data[0].cloud],
            label: 0,
        }];
        let (_, g) = backward(&model, &batch);
        let mut params = model.params.clone();
        Sgd::new(&params, 0.0).step(&mut params, &g, 0.5);
        for ((p, q), gi) in params
            .flatten()
            .iter()
            .zip(model.params.flatten())
            .zip(g.flatten())
        {
            assert_eq!(*p, q - 0.5 * gi);
        }
    }
}
