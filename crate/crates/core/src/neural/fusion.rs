//! Strategies that turn the per-frame features of one cloud into a single
//! feature. Every strategy must be symmetric in the frame order, since the
//! eight canonical poses of a rotated cloud come back in a different order.
//!
//! Strategies are looked up by name through [`fusion_by_name`].

use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Feature, NeuralError, Tensor};

/// Shared attention projections, each `[d, d]`, applied as `F·W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

impl FusionParams {
    /// Small query/key weights so the initial attention is close to uniform;
    /// the value map starts near the identity.
    pub fn new<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let qk_std = 1.0 / d as f64;
        let mut w_v = Tensor::random_normal(&[d, d], 0.01, rng);
        for i in 0..d {
            w_v.data[i * d + i] += 1.0;
        }
        Self {
            w_q: Tensor::random_normal(&[d, d], qk_std, rng),
            w_k: Tensor::random_normal(&[d, d], qk_std, rng),
            w_v,
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut eye = Tensor::zeros(&[d, d]);
        for i in 0..d {
            eye.data[i * d + i] = 1.0;
        }
        Self {
            w_q: eye.clone(),
            w_k: eye.clone(),
            w_v: eye,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape[0]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_q: self.w_q.zeros_like(),
            w_k: self.w_k.zeros_like(),
            w_v: self.w_v.zeros_like(),
        }
    }
}

/// `x·W` for a row vector `x` and square row-major `W`.
fn row_times(x: &[f64], w: &Tensor) -> Vec<f64> {
    let d = w.shape[1];
    let mut out = vec![0.0; d];
    for (k, &a) in x.iter().enumerate() {
        for (o, wv) in out.iter_mut().zip(&w.data[k * d..(k + 1) * d]) {
            *o += a * wv;
        }
    }
    out
}

/// `W·y`, the transpose product used by backprop.
fn times_col(w: &Tensor, y: &[f64]) -> Vec<f64> {
    let d = w.shape[1];
    (0..w.shape[0])
        .map(|k| {
            w.data[k * d..(k + 1) * d]
                .iter()
                .zip(y)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

fn outer_add(g: &mut Tensor, x: &[f64], y: &[f64]) {
    let d = g.shape[1];
    for (k, &a) in x.iter().enumerate() {
        if a != 0.0 {
            for (gv, b) in g.data[k * d..(k + 1) * d].iter_mut().zip(y) {
                *gv += a * b;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AttentionTrace {
    q: Vec<Feature>,
    k: Vec<Feature>,
    v: Vec<Feature>,
    /// Row `i` holds the softmax weights of output `i`.
    weights: Vec<Vec<f64>>,
    out: Vec<Feature>,
}

fn attention_forward(params: &FusionParams, feats: &[Feature]) -> AttentionTrace {
    let q: Vec<Feature> = feats.iter().map(|f| row_times(f, &params.w_q)).collect();
    let k: Vec<Feature> = feats.iter().map(|f| row_times(f, &params.w_k)).collect();
    let v: Vec<Feature> = feats.iter().map(|f| row_times(f, &params.w_v)).collect();
    let d = params.dim();
    let mut weights = Vec::with_capacity(feats.len());
    let mut out = Vec::with_capacity(feats.len());
    for qi in &q {
        // unscaled logits; the max shift only guards exp against overflow
        let logits: Vec<f64> = k.iter().map(|kj| dot(qi, kj)).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let w: Vec<f64> = e.iter().map(|x| x / z).collect();
        let mut o = vec![0.0; d];
        for (wj, vj) in w.iter().zip(&v) {
            for (ov, vv) in o.iter_mut().zip(vj) {
                *ov += wj * vv;
            }
        }
        weights.push(w);
        out.push(o);
    }
    AttentionTrace {
        q,
        k,
        v,
        weights,
        out,
    }
}

fn attention_backward(
    params: &FusionParams,
    feats: &[Feature],
    t: &AttentionTrace,
    d_out: &[Feature],
    grads: &mut FusionParams,
) -> Vec<Feature> {
    let n = feats.len();
    let d = params.dim();
    let mut dq = vec![vec![0.0; d]; n];
    let mut dk = vec![vec![0.0; d]; n];
    let mut dv = vec![vec![0.0; d]; n];
    for i in 0..n {
        let a = &t.weights[i];
        let da: Vec<f64> = t.v.iter().map(|vj| dot(&d_out[i], vj)).collect();
        let mean_da = dot(a, &da);
        for j in 0..n {
            for (g, o) in dv[j].iter_mut().zip(&d_out[i]) {
                *g += a[j] * o;
            }
            let ds = a[j] * (da[j] - mean_da);
            if ds != 0.0 {
                for m in 0..d {
                    dq[i][m] += ds * t.k[j][m];
                    dk[j][m] += ds * t.q[i][m];
                }
            }
        }
    }
    let mut d_feats = Vec::with_capacity(n);
    for i in 0..n {
        outer_add(&mut grads.w_q, &feats[i], &dq[i]);
        outer_add(&mut grads.w_k, &feats[i], &dk[i]);
        outer_add(&mut grads.w_v, &feats[i], &dv[i]);
        let mut df = times_col(&params.w_q, &dq[i]);
        for (a, b) in df.iter_mut().zip(times_col(&params.w_k, &dk[i])) {
            *a += b;
        }
        for (a, b) in df.iter_mut().zip(times_col(&params.w_v, &dv[i])) {
            *a += b;
        }
        d_feats.push(df);
    }
    d_feats
}

/// Softmax attention weights, one row per output frame.
pub fn attention_weights(params: &FusionParams, feats: &[Feature]) -> Vec<Vec<f64>> {
    attention_forward(params, feats).weights
}

/// `F̂ᵢ = Σⱼ softmaxⱼ(⟨FᵢW_Q, FⱼW_K⟩)·FⱼW_V` for every frame `i`.
pub fn attention_fuse(params: &FusionParams, feats: &[Feature]) -> Vec<Feature> {
    attention_forward(params, feats).out
}

/// Element-wise mean.
pub fn fuse_pool(feats: &[Feature]) -> Feature {
    AvgPool.pool(feats).0
}

/// Element-wise max.
pub fn max_pool(feats: &[Feature]) -> Feature {
    MaxPool.pool(feats).0
}

/// Symmetric reduction of a set of features.
pub trait Pooling: Send + Sync + Debug {
    fn name(&self) -> &'static str;
    /// Pooled feature and, for selecting pools, the winning input per channel.
    fn pool(&self, xs: &[Feature]) -> (Feature, Vec<usize>);
    fn backward(&self, count: usize, winners: &[usize], d_out: &[f64]) -> Vec<Feature>;
}

#[derive(Debug, Clone, Copy)]
pub struct AvgPool;

impl Pooling for AvgPool {
    fn name(&self) -> &'static str {
        "avg"
    }

    fn pool(&self, xs: &[Feature]) -> (Feature, Vec<usize>) {
        let mut out = vec![0.0; xs[0].len()];
        for x in xs {
            for (o, v) in out.iter_mut().zip(x) {
                *o += v;
            }
        }
        let n = xs.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        (out, Vec::new())
    }

    fn backward(&self, count: usize, _winners: &[usize], d_out: &[f64]) -> Vec<Feature> {
        let share: Feature = d_out.iter().map(|g| g / count as f64).collect();
        vec![share; count]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaxPool;

impl Pooling for MaxPool {
    fn name(&self) -> &'static str {
        "max"
    }

    fn pool(&self, xs: &[Feature]) -> (Feature, Vec<usize>) {
        let d = xs[0].len();
        let mut out = xs[0].clone();
        let mut winners = vec![0usize; d];
        for (i, x) in xs.iter().enumerate().skip(1) {
            for j in 0..d {
                if x[j] > out[j] {
                    out[j] = x[j];
                    winners[j] = i;
                }
            }
        }
        (out, winners)
    }

    fn backward(&self, count: usize, winners: &[usize], d_out: &[f64]) -> Vec<Feature> {
        let mut grads = vec![vec![0.0; d_out.len()]; count];
        for (j, &w) in winners.iter().enumerate() {
            grads[w][j] = d_out[j];
        }
        grads
    }
}

/// Everything a fusion strategy needs to run its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTrace {
    attention: Option<AttentionTrace>,
    winners: Vec<usize>,
}

/// A frame-fusion strategy: `frames` features in, one feature out.
pub trait FrameFusion: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// Whether the strategy owns [`FusionParams`].
    fn uses_attention(&self) -> bool;

    /// Number of frames the strategy expects per example, if fixed.
    fn fixed_frame_count(&self) -> Option<usize> {
        None
    }

    fn forward(&self, params: Option<&FusionParams>, feats: &[Feature]) -> (Feature, FusionTrace);

    /// Returns the gradient for each input feature; attention gradients are
    /// accumulated into `grads`.
    fn backward(
        &self,
        params: Option<&FusionParams>,
        feats: &[Feature],
        trace: &FusionTrace,
        d_out: &[f64],
        grads: Option<&mut FusionParams>,
    ) -> Vec<Feature>;
}

/// Pass-through for models that see one frame per forward pass.
#[derive(Debug, Clone, Copy)]
pub struct SingleFrame;

impl FrameFusion for SingleFrame {
    fn name(&self) -> &'static str {
        "single"
    }

    fn uses_attention(&self) -> bool {
        false
    }

    fn fixed_frame_count(&self) -> Option<usize> {
        Some(1)
    }

    fn forward(&self, _params: Option<&FusionParams>, feats: &[Feature]) -> (Feature, FusionTrace) {
        assert_eq!(
            feats.len(),
            1,
            "single-frame fusion takes exactly one feature"
        );
        (
            feats[0].clone(),
            FusionTrace {
                attention: None,
                winners: Vec::new(),
            },
        )
    }

    fn backward(
        &self,
        _params: Option<&FusionParams>,
        _feats: &[Feature],
        _trace: &FusionTrace,
        d_out: &[f64],
        _grads: Option<&mut FusionParams>,
    ) -> Vec<Feature> {
        vec![d_out.to_vec()]
    }
}

/// Pooling applied directly to the frame features.
#[derive(Debug)]
pub struct DirectPool(pub Box<dyn Pooling>);

impl FrameFusion for DirectPool {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn uses_attention(&self) -> bool {
        false
    }

    fn forward(&self, _params: Option<&FusionParams>, feats: &[Feature]) -> (Feature, FusionTrace) {
        let (out, winners) = self.0.pool(feats);
        (
            out,
            FusionTrace {
                attention: None,
                winners,
            },
        )
    }

    fn backward(
        &self,
        _params: Option<&FusionParams>,
        feats: &[Feature],
        trace: &FusionTrace,
        d_out: &[f64],
        _grads: Option<&mut FusionParams>,
    ) -> Vec<Feature> {
        self.0.backward(feats.len(), &trace.winners, d_out)
    }
}

/// Self-attention across frames followed by a pooling.
#[derive(Debug)]
pub struct AttentionPool {
    name: &'static str,
    pooling: Box<dyn Pooling>,
}

impl FrameFusion for AttentionPool {
    fn name(&self) -> &'static str {
        self.name
    }

    fn uses_attention(&self) -> bool {
        true
    }

    fn forward(&self, params: Option<&FusionParams>, feats: &[Feature]) -> (Feature, FusionTrace) {
        let params = params.expect("attention fusion requires parameters");
        let att = attention_forward(params, feats);
        let (out, winners) = self.pooling.pool(&att.out);
        (
            out,
            FusionTrace {
                attention: Some(att),
                winners,
            },
        )
    }

    fn backward(
        &self,
        params: Option<&FusionParams>,
        feats: &[Feature],
        trace: &FusionTrace,
        d_out: &[f64],
        grads: Option<&mut FusionParams>,
    ) -> Vec<Feature> {
        let params = params.expect("attention fusion requires parameters");
        let grads = grads.expect("attention fusion requires a gradient buffer");
        let att = trace
            .attention
            .as_ref()
            .expect("trace from attention forward");
        let d_att = self.pooling.backward(feats.len(), &trace.winners, d_out);
        attention_backward(params, feats, att, &d_att, grads)
    }
}

type FusionCtor = fn() -> Box<dyn FrameFusion>;

const REGISTRY: &[(&str, FusionCtor)] = &[
    ("attention-avg", || {
        Box::new(AttentionPool {
            name: "attention-avg",
            pooling: Box::new(AvgPool),
        })
    }),
    ("attention-max", || {
        Box::new(AttentionPool {
            name: "attention-max",
            pooling: Box::new(MaxPool),
        })
    }),
    ("avg", || Box::new(DirectPool(Box::new(AvgPool)))),
    ("max", || Box::new(DirectPool(Box::new(MaxPool)))),
    ("single", || Box::new(SingleFrame)),
];

/// Names accepted by [`fusion_by_name`].
pub const FUSION_NAMES: &[&str] = &["attention-avg", "attention-max", "avg", "max", "single"];

pub fn fusion_by_name(name: &str) -> Result<Box<dyn FrameFusion>, NeuralError> {
    REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, ctor)| ctor())
        .ok_or_else(|| NeuralError::UnknownFusion(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_feats(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Feature> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn registry_names_round_trip() {
        for name in FUSION_NAMES {
            assert_eq!(fusion_by_name(name).unwrap().name(), *name);
        }
        assert_eq!(REGISTRY.len(), FUSION_NAMES.len());
        assert!(matches!(
            fusion_by_name("median"),
            Err(NeuralError::UnknownFusion(_))
        ));
    }

    #[test]
    fn zero_query_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 5;
        let mut params = FusionParams::new(d, &mut rng);
        params.w_q = Tensor::zeros(&[d, d]);
        let feats = random_feats(&mut rng, 8, d);
        for row in attention_weights(&params, &feats) {
            for w in row {
                assert!((w - 0.125).abs() < 1e-15);
            }
        }
        let values: Vec<Feature> = feats.iter().map(|f| row_times(f, &params.w_v)).collect();
        let mean = fuse_pool(&values);
        for out in attention_fuse(&params, &feats) {
            for (a, b) in out.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outputs_follow_input_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = FusionParams::new(6, &mut rng);
        let feats = random_feats(&mut rng, 8, 6);
        let out = attention_fuse(&params, &feats);
        let mut perm: Vec<usize> = (0..8).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<Feature> = perm.iter().map(|&i| feats[i].clone()).collect();
        let out_p = attention_fuse(&params, &permuted);
        for (slot, &i) in perm.iter().enumerate() {
            for (a, b) in out_p[slot].iter().zip(&out[i]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_dimensional_hand_check() {
        // identity projections: logits are plain dot products
        let feats: Vec<Feature> = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.5, 0.5],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
            vec![0.2, -0.3],
            vec![1.0, 1.0],
            vec![-0.5, 0.25],
        ];
        let out = attention_fuse(&FusionParams::identity(2), &feats);
        for (i, fi) in feats.iter().enumerate() {
            let scores: Vec<f64> = feats
                .iter()
                .map(|fj| (fi[0] * fj[0] + fi[1] * fj[1]).exp())
                .collect();
            let z: f64 = scores.iter().sum();
            let mut expected = [0.0, 0.0];
            for (s, fj) in scores.iter().zip(&feats) {
                expected[0] += s / z * fj[0];
                expected[1] += s / z * fj[1];
            }
            assert!((out[i][0] - expected[0]).abs() < 1e-12);
            assert!((out[i][1] - expected[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let feats: Vec<Feature> = (0..8).map(|i| vec![100.0 * i as f64, 50.0]).collect();
        let w = attention_weights(&FusionParams::identity(2), &feats);
        for row in &w {
            assert!(row.iter().all(|x| x.is_finite()));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_cases() {
        let v = vec![1.0, -2.0, 3.5];
        assert_eq!(fuse_pool(&vec![v.clone(); 8]), v);
        let two = vec![vec![1.0, 4.0], vec![3.0, 0.0]];
        assert_eq!(fuse_pool(&two), vec![2.0, 2.0]);
        assert_eq!(max_pool(&two), vec![3.0, 4.0]);
        let (_, winners) = MaxPool.pool(&[vec![1.0], vec![1.0], vec![0.5]]);
        assert_eq!(winners, vec![0]);
    }

    proptest! {
        #[test]
        fn weights_are_a_distribution(vals in proptest::collection::vec(-3.0f64..3.0, 32), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = FusionParams::new(4, &mut rng);
            let feats: Vec<Feature> = vals.chunks(4).map(|c| c.to_vec()).collect();
            for row in attention_weights(&params, &feats) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&w| w > 0.0 && w < 1.0));
            }
        }

        #[test]
        fn fused_feature_ignores_frame_order(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 6;
            let params = FusionParams::new(d, &mut rng);
            let feats = random_feats(&mut rng, 8, d);
            let mut perm = feats.clone();
            perm.shuffle(&mut rng);
            for name in ["attention-avg", "attention-max", "avg", "max"] {
                let f = fusion_by_name(name).unwrap();
                let (a, _) = f.forward(Some(&params), &feats);
                let (b, _) = f.forward(Some(&params), &perm);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
