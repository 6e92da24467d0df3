use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::{classify_backward, classify_traced, loss_gradient};
use super::encoder::{encode_backward, encode_traced};
use super::{
    encode, fusion_by_name, loss_softmax_ce, ClassifierParams, EncoderParams, Feature, FrameFusion,
    FusionParams, GradCheckable, NeuralError, Tensor,
};
use crate::geometry::PointCloud;

/// Architecture of a classifier: encoder widths, classifier hidden width,
/// class count and the frame-fusion strategy name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub encoder_widths: Vec<usize>,
    pub classifier_hidden: usize,
    pub classes: usize,
    pub fusion: String,
}

impl ModelSpec {
    pub fn feature_dim(&self) -> usize {
        self.encoder_widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let w = &self.encoder_widths;
        if w.len() < 2 || w[0] != 3 || w.contains(&0) {
            return Err(NeuralError::Spec(format!(
                "encoder widths must start at 3 and be positive, got {w:?}"
            )));
        }
        if self.classifier_hidden == 0 {
            return Err(NeuralError::Spec(
                "classifier hidden width must be positive".into(),
            ));
        }
        if self.classes < 2 {
            return Err(NeuralError::Spec(format!(
                "need at least two classes, got {}",
                self.classes
            )));
        }
        fusion_by_name(&self.fusion)?;
        Ok(())
    }
}

/// Every trainable tensor of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub fusion: Option<FusionParams>,
    pub classifier: ClassifierParams,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            fusion: self.fusion.as_ref().map(FusionParams::zeros_like),
            classifier: self.classifier.zeros_like(),
        }
    }

    /// Tensors with stable names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.{i}.w"), &l.w));
            out.push((format!("encoder.{i}.b"), &l.b));
        }
        if let Some(f) = &self.fusion {
            out.push(("fusion.w_q".into(), &f.w_q));
            out.push(("fusion.w_k".into(), &f.w_k));
            out.push(("fusion.w_v".into(), &f.w_v));
        }
        out.push(("classifier.hidden.w".into(), &self.classifier.hidden.w));
        out.push(("classifier.hidden.b".into(), &self.classifier.hidden.b));
        out.push(("classifier.out.w".into(), &self.classifier.out.w));
        out.push(("classifier.out.b".into(), &self.classifier.out.b));
        out
    }

    /// Same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in self.encoder.layers.iter_mut() {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        if let Some(f) = &mut self.fusion {
            out.push(&mut f.w_q);
            out.push(&mut f.w_k);
            out.push(&mut f.w_v);
        }
        let c = &mut self.classifier;
        out.extend([&mut c.hidden.w, &mut c.hidden.b, &mut c.out.w, &mut c.out.b]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.data.iter().copied())
            .collect()
    }

    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (k, (_, t)) in self.named_tensors().iter().enumerate() {
            if i < t.len() {
                return (k, i);
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn get_flat(&self, i: usize) -> f64 {
        let (k, j) = self.locate(i);
        self.named_tensors()[k].1.data[j]
    }

    pub fn set_flat(&mut self, i: usize, value: f64) {
        let (k, j) = self.locate(i);
        self.tensors_mut()[k].data[j] = value;
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        let others: Vec<Tensor> = other
            .named_tensors()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        for (a, b) in self.tensors_mut().into_iter().zip(&others) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Shape check against another parameter set, e.g. one read from disk.
    pub fn same_layout(&self, other: &ModelParams) -> bool {
        let a = self.named_tensors();
        let b = other.named_tensors();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape == tb.shape)
    }
}

/// A spec, its fusion strategy and its weights.
#[derive(Debug)]
pub struct Model {
    spec: ModelSpec,
    fusion: Box<dyn FrameFusion>,
    pub params: ModelParams,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            fusion: fusion_by_name(&self.spec.fusion).expect("validated at construction"),
            params: self.params.clone(),
        }
    }
}

impl Model {
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self, NeuralError> {
        spec.validate()?;
        let fusion = fusion_by_name(&spec.fusion)?;
        let encoder = EncoderParams::new(&spec.encoder_widths, rng)?;
        let d = spec.feature_dim();
        let fusion_params = fusion.uses_attention().then(|| FusionParams::new(d, rng));
        let classifier = ClassifierParams::new(d, spec.classifier_hidden, spec.classes, rng);
        Ok(Self {
            spec,
            fusion,
            params: ModelParams {
                encoder,
                fusion: fusion_params,
                classifier,
            },
        })
    }

    /// Rebuilds a model from stored weights, checking every shape.
    pub fn from_params(spec: ModelSpec, params: ModelParams) -> Result<Self, NeuralError> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let reference = Self::new(spec, &mut rng)?;
        if !reference.params.same_layout(&params) {
            return Err(NeuralError::Shape(
                "stored parameters do not match the model spec".into(),
            ));
        }
        Ok(Self {
            params,
            ..reference
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn fusion(&self) -> &dyn FrameFusion {
        self.fusion.as_ref()
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    fn check_views(&self, n: usize) {
        assert!(n > 0, "at least one view is required");
        if let Some(k) = self.fusion.fixed_frame_count() {
            assert_eq!(
                n,
                k,
                "fusion '{}' takes {k} view(s), got {n}",
                self.fusion.name()
            );
        }
    }

    pub fn frame_features(&self, views: &[&PointCloud]) -> Vec<Feature> {
        views
            .iter()
            .map(|v| encode(&self.params.encoder, v))
            .collect()
    }

    pub fn fuse(&self, feats: &[Feature]) -> Feature {
        self.check_views(feats.len());
        self.fusion.forward(self.params.fusion.as_ref(), feats).0
    }

    pub fn fused_feature(&self, views: &[&PointCloud]) -> Feature {
        self.fuse(&self.frame_features(views))
    }

    pub fn logits(&self, views: &[&PointCloud]) -> Vec<f64> {
        classify_traced(&self.params.classifier, &self.fused_feature(views)).0
    }
}

/// One training example: the views fed to the fusion and the class label.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub views: Vec<&'a PointCloud>,
    pub label: usize,
}

/// Examples per work unit. Fixed so the reduction order, and hence every
/// bit of the result, does not depend on the thread count.
const CHUNK: usize = 4;

fn example_backward(model: &Model, ex: &Example, scale: f64, grads: &mut Gradients) -> f64 {
    model.check_views(ex.views.len());
    let p = &model.params;
    let (feats, traces): (Vec<Feature>, Vec<_>) = ex
        .views
        .iter()
        .map(|v| encode_traced(&p.encoder, v))
        .unzip();
    let (fused, ftrace) = model.fusion.forward(p.fusion.as_ref(), &feats);
    let (logits, hidden) = classify_traced(&p.classifier, &fused);
    let loss = loss_softmax_ce(&logits, ex.label);
    let d_logits = loss_gradient(&logits, ex.label, scale);
    let d_fused = classify_backward(
        &p.classifier,
        &fused,
        &hidden,
        &d_logits,
        &mut grads.classifier,
    );
    let d_feats = model.fusion.backward(
        p.fusion.as_ref(),
        &feats,
        &ftrace,
        &d_fused,
        grads.fusion.as_mut(),
    );
    for ((view, trace), d) in ex.views.iter().zip(&traces).zip(&d_feats) {
        encode_backward(&p.encoder, view, trace, d, &mut grads.encoder);
    }
    loss
}

/// Mean loss over the batch and its exact gradient.
pub fn backward(model: &Model, batch: &[Example]) -> (f64, Gradients) {
    let (sum, g) = backward_scaled(model, batch, 1.0 / batch.len() as f64);
    (sum / batch.len() as f64, g)
}

/// Sum of per-example losses, and the gradient of `scale · Σ loss`.
pub fn backward_scaled(model: &Model, batch: &[Example], scale: f64) -> (f64, Gradients) {
    let partials: Vec<(f64, Gradients)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = model.params.zeros_like();
            let mut loss = 0.0;
            for ex in chunk {
                loss += example_backward(model, ex, scale, &mut g);
            }
            (loss, g)
        })
        .collect();
    let mut total = model.params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        total.add_assign(g);
    }
    (loss, total)
}

pub fn batch_loss(model: &Model, batch: &[Example]) -> f64 {
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|ex| loss_softmax_ce(&model.logits(&ex.views), ex.label))
        .collect();
    losses.iter().sum::<f64>() / batch.len() as f64
}

/// A model and a fixed batch viewed as a function of the flat parameters.
#[derive(Debug)]
pub struct ModelObjective<'a> {
    pub model: Model,
    pub batch: Vec<Example<'a>>,
}

impl GradCheckable for ModelObjective<'_> {
    fn num_params(&self) -> usize {
        self.model.params.num_params()
    }

    fn param(&self, i: usize) -> f64 {
        self.model.params.get_flat(i)
    }

    fn set_param(&mut self, i: usize, value: f64) {
        self.model.params.set_flat(i, value);
    }

    fn loss(&self) -> f64 {
        batch_loss(&self.model, &self.batch)
    }

    fn gradient(&self) -> Vec<f64> {
        backward(&self.model, &self.batch).1.flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let rows: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.3..0.3),
                ]
            })
            .collect();
        PointCloud::from_rows(&rows).unwrap()
    }

    fn spec(fusion: &str) -> ModelSpec {
        ModelSpec {
            encoder_widths: vec![3, 8, 10],
            classifier_hidden: 7,
            classes: 3,
            fusion: fusion.into(),
        }
    }

    fn views(rng: &mut ChaCha8Rng, k: usize) -> Vec<PointCloud> {
        (0..k).map(|_| cloud(rng, 32)).collect()
    }

    #[test]
    fn gradients_match_finite_differences_for_every_fusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for name in super::super::FUSION_NAMES {
            let k = if *name == "single" { 1 } else { 8 };
            let data: Vec<Vec<PointCloud>> = (0..3).map(|_| views(&mut rng, k)).collect();
            let batch: Vec<Example> = data
                .iter()
                .enumerate()
                .map(|(i, v)| Example {
                    views: v.iter().collect(),
                    label: i % 3,
                })
                .collect();
            let mut model = Model::new(spec(name), &mut rng).unwrap();
            if let Some(f) = model.params.fusion.as_mut() {
                // generic weights: the near-identity value map at init leaves
                // post-attention max pooling with near ties
                for t in [&mut f.w_q, &mut f.w_k, &mut f.w_v] {
                    *t = Tensor::random_normal(&t.shape.clone(), 0.5, &mut rng);
                }
            }
            let mut obj = ModelObjective { model, batch };
            let report = finite_difference_check(&mut obj, 1e-5, 150, &mut rng);
            assert!(report.max_rel_error < 1e-5, "{name}: {report:?}");
        }
    }

    #[test]
    fn doubling_scale_doubles_gradient_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = views(&mut rng, 8);
        let batch = vec![Example {
            views: data.iter().collect(),
            label: 1,
        }];
        let model = Model::new(spec("attention-avg"), &mut rng).unwrap();
        let (_, g1) = backward_scaled(&model, &batch, 0.3);
        let (_, g2) = backward_scaled(&model, &batch, 0.6);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn unused_hidden_unit_gets_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = views(&mut rng, 8);
        let batch = vec![Example {
            views: data.iter().collect(),
            label: 0,
        }];
        let mut model = Model::new(spec("attention-avg"), &mut rng).unwrap();
        // hidden unit 2 feeds nothing
        let c = model.params.classifier.out.output_dim();
        for j in 0..c {
            model.params.classifier.out.w.data[2 * c + j] = 0.0;
        }
        let (_, g) = backward(&model, &batch);
        let h = model.params.classifier.hidden.output_dim();
        for i in 0..model.feature_dim() {
            assert_eq!(g.classifier.hidden.w.data[i * h + 2], 0.0);
        }
        assert_eq!(g.classifier.hidden.b.data[2], 0.0);
    }

    #[test]
    fn result_independent_of_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<Vec<PointCloud>> = (0..11).map(|_| views(&mut rng, 8)).collect();
        let batch: Vec<Example> = data
            .iter()
            .map(|v| Example {
                views: v.iter().collect(),
                label: 2,
            })
            .collect();
        let model = Model::new(spec("attention-max"), &mut rng).unwrap();
        let many = backward(&model, &batch);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let one = pool.install(|| backward(&model, &batch));
        assert_eq!(many.0.to_bits(), one.0.to_bits());
        assert_eq!(many.1, one.1);
    }

    #[test]
    fn flat_indexing_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = Model::new(spec("attention-avg"), &mut rng).unwrap().params;
        let flat = p.flatten();
        assert_eq!(flat.len(), p.num_params());
        for i in [0, 7, flat.len() / 2, flat.len() - 1] {
            assert_eq!(p.get_flat(i), flat[i]);
            p.set_flat(i, 42.0);
            assert_eq!(p.flatten()[i], 42.0);
        }
    }

    #[test]
    fn from_params_checks_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = Model::new(spec("max"), &mut rng).unwrap();
        assert!(Model::from_params(spec("max"), m.params.clone()).is_ok());
        assert!(Model::from_params(spec("attention-avg"), m.params.clone()).is_err());
        let mut wider = spec("max");
        wider.classifier_hidden = 8;
        assert!(Model::from_params(wider, m.params).is_err());
        let mut bad = spec("max");
        bad.fusion = "median".into();
        assert!(matches!(bad.validate(), Err(NeuralError::UnknownFusion(_))));
    }
}
