//! Model variants: how a raw cloud becomes the views a model sees, during
//! training and at inference. Variants are looked up by name.

use std::borrow::Cow;
use std::fmt::Debug;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{DegeneratePolicy, RotationMode, TrainConfig, TrainError};
use crate::canonical::{canonical_set_from, frame_set, FRAME_COUNT};
use crate::geometry::{apply_rotation, PointCloud};
use crate::neural::{classify, Feature, Model};

pub trait ModelVariant: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// Fusion the variant forces regardless of the configured one.
    fn fixed_fusion(&self) -> Option<&'static str>;

    /// Whether inputs pass through canonicalization, which makes every
    /// prediction independent of the input rotation.
    fn rotation_invariant(&self) -> bool;

    /// Per-cloud inputs computed once. `None` drops the cloud.
    fn prepare(
        &self,
        cloud: &PointCloud,
        policy: DegeneratePolicy,
    ) -> Result<Option<Vec<PointCloud>>, TrainError>;

    /// Views for one training step.
    fn training_views<'a>(
        &self,
        prepared: &'a [PointCloud],
        rotation: RotationMode,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Cow<'a, PointCloud>>;

    /// Groups of views whose logits are averaged at inference.
    fn inference_groups<'a>(&self, prepared: &'a [PointCloud]) -> Vec<Vec<&'a PointCloud>>;
}

fn canonical_views(
    cloud: &PointCloud,
    policy: DegeneratePolicy,
) -> Result<Option<Vec<PointCloud>>, TrainError> {
    let frames = frame_set(cloud)?;
    if frames.degenerate() {
        match policy {
            DegeneratePolicy::Skip => return Ok(None),
            DegeneratePolicy::UseSolverBasis => {
                log::warn!(
                    "degenerate covariance (eigenvalues {:?}); using the solver basis",
                    frames.eigenvalues
                );
            }
        }
    }
    Ok(Some(
        canonical_set_from(cloud, &frames)
            .into_iter()
            .map(|c| c.points)
            .collect(),
    ))
}

/// All eight canonical clouds through a shared encoder and a fusion.
#[derive(Debug, Clone, Copy)]
pub struct MultiFrame;

impl ModelVariant for MultiFrame {
    fn name(&self) -> &'static str {
        "multi_frame"
    }

    fn fixed_fusion(&self) -> Option<&'static str> {
        None
    }

    fn rotation_invariant(&self) -> bool {
        true
    }

    fn prepare(
        &self,
        cloud: &PointCloud,
        policy: DegeneratePolicy,
    ) -> Result<Option<Vec<PointCloud>>, TrainError> {
        canonical_views(cloud, policy)
    }

    fn training_views<'a>(
        &self,
        prepared: &'a [PointCloud],
        _: RotationMode,
        _: &mut ChaCha8Rng,
    ) -> Vec<Cow<'a, PointCloud>> {
        prepared.iter().map(Cow::Borrowed).collect()
    }

    fn inference_groups<'a>(&self, prepared: &'a [PointCloud]) -> Vec<Vec<&'a PointCloud>> {
        vec![prepared.iter().collect()]
    }
}

/// One uniformly drawn canonical cloud per training step. Inference
/// averages the logits of all eight, which keeps predictions independent
/// of the frame order and hence of the input rotation.
#[derive(Debug, Clone, Copy)]
pub struct SingleFrame;

impl ModelVariant for SingleFrame {
    fn name(&self) -> &'static str {
        "single_frame"
    }

    fn fixed_fusion(&self) -> Option<&'static str> {
        Some("single")
    }

    fn rotation_invariant(&self) -> bool {
        true
    }

    fn prepare(
        &self,
        cloud: &PointCloud,
        policy: DegeneratePolicy,
    ) -> Result<Option<Vec<PointCloud>>, TrainError> {
        canonical_views(cloud, policy)
    }

    fn training_views<'a>(
        &self,
        prepared: &'a [PointCloud],
        _: RotationMode,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Cow<'a, PointCloud>> {
        vec![Cow::Borrowed(&prepared[rng.random_range(0..FRAME_COUNT)])]
    }

    fn inference_groups<'a>(&self, prepared: &'a [PointCloud]) -> Vec<Vec<&'a PointCloud>> {
        prepared.iter().map(|c| vec![c]).collect()
    }
}

/// The raw cloud, rotated per the training protocol: the ablation control.
#[derive(Debug, Clone, Copy)]
pub struct BaselineRaw;

impl ModelVariant for BaselineRaw {
    fn name(&self) -> &'static str {
        "baseline_raw"
    }

    fn fixed_fusion(&self) -> Option<&'static str> {
        Some("single")
    }

    fn rotation_invariant(&self) -> bool {
        false
    }

    fn prepare(
        &self,
        cloud: &PointCloud,
        _: DegeneratePolicy,
    ) -> Result<Option<Vec<PointCloud>>, TrainError> {
        Ok(Some(vec![cloud.clone()]))
    }

    fn training_views<'a>(
        &self,
        prepared: &'a [PointCloud],
        rotation: RotationMode,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Cow<'a, PointCloud>> {
        match rotation {
            RotationMode::None => vec![Cow::Borrowed(&prepared[0])],
            mode => vec![Cow::Owned(apply_rotation(&mode.sample(rng), &prepared[0]))],
        }
    }

    fn inference_groups<'a>(&self, prepared: &'a [PointCloud]) -> Vec<Vec<&'a PointCloud>> {
        vec![vec![&prepared[0]]]
    }
}

type VariantCtor = fn() -> Box<dyn ModelVariant>;

const REGISTRY: &[(&str, VariantCtor)] = &[
    ("multi_frame", || Box::new(MultiFrame)),
    ("single_frame", || Box::new(SingleFrame)),
    ("baseline_raw", || Box::new(BaselineRaw)),
];

pub const VARIANT_NAMES: &[&str] = &["multi_frame", "single_frame", "baseline_raw"];

pub fn variant_by_name(name: &str) -> Result<Box<dyn ModelVariant>, TrainError> {
    REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, ctor)| ctor())
        .ok_or_else(|| {
            TrainError::Config(format!(
                "unknown variant '{name}' (known: {})",
                VARIANT_NAMES.join(", ")
            ))
        })
}

/// A trained model together with the variant that feeds it.
#[derive(Debug)]
pub struct Pipeline {
    pub config: TrainConfig,
    variant: Box<dyn ModelVariant>,
    pub model: Model,
}

impl Clone for Pipeline {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            variant: variant_by_name(self.variant.name()).expect("registered"),
            model: self.model.clone(),
        }
    }
}

impl Pipeline {
    pub fn new(config: TrainConfig, model: Model) -> Result<Self, TrainError> {
        let variant = variant_by_name(&config.variant)?;
        if model.spec().fusion != config.effective_fusion() {
            return Err(TrainError::Config(format!(
                "model fusion '{}' does not match variant '{}'",
                model.spec().fusion,
                config.variant
            )));
        }
        Ok(Self {
            config,
            variant,
            model,
        })
    }

    pub fn variant(&self) -> &dyn ModelVariant {
        self.variant.as_ref()
    }

    pub fn prepare(&self, cloud: &PointCloud) -> Result<Option<Vec<PointCloud>>, TrainError> {
        self.variant.prepare(cloud, self.config.degenerate_policy)
    }

    /// Fused feature of each inference group; `None` when the cloud is dropped.
    pub fn fused_features(&self, cloud: &PointCloud) -> Result<Option<Vec<Feature>>, TrainError> {
        Ok(self.prepare(cloud)?.map(|views| {
            self.variant
                .inference_groups(&views)
                .iter()
                .map(|g| self.model.fused_feature(g))
                .collect()
        }))
    }

    /// Mean logits over the inference groups.
    pub fn logits(&self, cloud: &PointCloud) -> Result<Option<Vec<f64>>, TrainError> {
        Ok(self.fused_features(cloud)?.map(|feats| {
            let mut mean = vec![0.0; self.model.spec().classes];
            for f in &feats {
                for (m, l) in mean
                    .iter_mut()
                    .zip(classify(&self.model.params.classifier, f))
                {
                    *m += l;
                }
            }
            let n = feats.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            mean
        }))
    }

    pub fn predict(&self, cloud: &PointCloud) -> Result<Option<usize>, TrainError> {
        Ok(self.logits(cloud)?.map(|l| argmax(&l)))
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn registry_round_trip() {
        for name in VARIANT_NAMES {
            assert_eq!(variant_by_name(name).unwrap().name(), *name);
        }
        assert!(variant_by_name("dual_frame").is_err());
    }

    #[test]
    fn degenerate_policy_applies() {
        // regular octahedron vertices: isotropic covariance
        let rows = [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let cloud = PointCloud::from_rows(&rows).unwrap();
        assert!(MultiFrame
            .prepare(&cloud, DegeneratePolicy::Skip)
            .unwrap()
            .is_none());
        assert_eq!(
            MultiFrame
                .prepare(&cloud, DegeneratePolicy::UseSolverBasis)
                .unwrap()
                .unwrap()
                .len(),
            8
        );
        assert!(BaselineRaw
            .prepare(&cloud, DegeneratePolicy::Skip)
            .unwrap()
            .is_some());
    }

    #[test]
    fn view_counts() {
        let rows: Vec<[f64; 3]> = (0..20)
            .map(|i| [i as f64, (i * i % 7) as f64 * 0.3, (i % 3) as f64 * 0.1])
            .collect();
        let cloud = PointCloud::from_rows(&rows).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prepared = MultiFrame
            .prepare(&cloud, DegeneratePolicy::Skip)
            .unwrap()
            .unwrap();
        assert_eq!(
            MultiFrame
                .training_views(&prepared, RotationMode::So3, &mut rng)
                .len(),
            8
        );
        assert_eq!(
            SingleFrame
                .training_views(&prepared, RotationMode::So3, &mut rng)
                .len(),
            1
        );
        assert_eq!(SingleFrame.inference_groups(&prepared).len(), 8);
        let raw = BaselineRaw
            .prepare(&cloud, DegeneratePolicy::Skip)
            .unwrap()
            .unwrap();
        let v = BaselineRaw.training_views(&raw, RotationMode::Z, &mut rng);
        assert_ne!(v[0].as_ref(), &cloud);
        assert!(crate::geometry::pairwise_distance_deviation(v[0].as_ref(), &cloud) < 1e-12);
        assert!(matches!(
            BaselineRaw.training_views(&raw, RotationMode::None, &mut rng)[0],
            Cow::Borrowed(_)
        ));
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
    }
}
