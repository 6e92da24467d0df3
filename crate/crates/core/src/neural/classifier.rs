use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{relu_in_place, Dense};

/// Two dense layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub hidden: Dense,
    pub out: Dense,
}

impl ClassifierParams {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            hidden: Dense::he(input, hidden, rng),
            out: Dense::he(hidden, classes, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.out.output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.zeros_like(),
            out: self.out.zeros_like(),
        }
    }
}

pub fn classify(params: &ClassifierParams, feature: &[f64]) -> Vec<f64> {
    classify_traced(params, feature).0
}

/// Logits plus the post-ReLU hidden activations.
pub(crate) fn classify_traced(params: &ClassifierParams, feature: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut h = params.hidden.forward(feature);
    relu_in_place(&mut h);
    (params.out.forward(&h), h)
}

/// Returns the gradient with respect to the input feature.
pub(crate) fn classify_backward(
    params: &ClassifierParams,
    feature: &[f64],
    hidden: &[f64],
    d_logits: &[f64],
    grads: &mut ClassifierParams,
) -> Vec<f64> {
    let mut dh = params.out.backward(hidden, d_logits, &mut grads.out, true);
    for (g, &a) in dh.iter_mut().zip(hidden) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    params
        .hidden
        .backward(feature, &dh, &mut grads.hidden, true)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `−log softmax(logits)[label]`, computed as `logsumexp − logit[label]`.
pub fn loss_softmax_ce(logits: &[f64], label: usize) -> f64 {
    assert!(
        label < logits.len(),
        "label {label} out of range for {} classes",
        logits.len()
    );
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    m + z.ln() - logits[label]
}

/// Gradient of [`loss_softmax_ce`] with respect to the logits, times `scale`.
pub(crate) fn loss_gradient(logits: &[f64], label: usize, scale: f64) -> Vec<f64> {
    let mut p = softmax(logits);
    p[label] -= 1.0;
    p.iter_mut().for_each(|v| *v *= scale);
    p
}
