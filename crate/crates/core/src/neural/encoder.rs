use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{relu_in_place, Dense, Feature, NeuralError};
use crate::geometry::PointCloud;

/// Shared per-point MLP (ReLU after every layer) followed by a channel-wise
/// max over points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<Dense>,
}

impl EncoderParams {
    /// `widths` starts with the input width 3, e.g. `[3, 64, 128, 256]`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self, NeuralError> {
        if widths.len() < 2 || widths[0] != 3 || widths.contains(&0) {
            return Err(NeuralError::Spec(format!(
                "encoder widths must start at 3 and be positive, got {widths:?}"
            )));
        }
        Ok(Self {
            layers: widths
                .windows(2)
                .map(|w| Dense::he(w[0], w[1], rng))
                .collect(),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.output_dim()).unwrap_or(3)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    /// Post-ReLU activations of every layer for one point.
    fn point_activations(&self, p: [f64; 3], acts: &mut [Vec<f64>]) {
        let mut input: &[f64] = &p;
        for (layer, out) in self.layers.iter().zip(acts.iter_mut()) {
            layer.forward_into(input, out);
            relu_in_place(out);
            input = out;
        }
    }

    fn scratch(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .map(|l| vec![0.0; l.output_dim()])
            .collect()
    }
}

/// Which point won the max for each output channel.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EncoderTrace {
    pub argmax: Vec<usize>,
}

pub fn encode(params: &EncoderParams, cloud: &PointCloud) -> Feature {
    encode_traced(params, cloud).0
}

pub(crate) fn encode_traced(params: &EncoderParams, cloud: &PointCloud) -> (Feature, EncoderTrace) {
    let d = params.output_dim();
    let mut acts = params.scratch();
    let mut best = vec![f64::NEG_INFINITY; d];
    let mut argmax = vec![0usize; d];
    for (i, p) in cloud.points().iter().enumerate() {
        params.point_activations([p.x, p.y, p.z], &mut acts);
        let last = acts.last().expect("at least one layer");
        for (j, &v) in last.iter().enumerate() {
            // strict comparison keeps the first index on ties
            if v > best[j] {
                best[j] = v;
                argmax[j] = i;
            }
        }
    }
    (best, EncoderTrace { argmax })
}

/// Backpropagates `d_feature` to the encoder weights. Only the points that
/// won a max receive gradient, so only their activations are recomputed.
pub(crate) fn encode_backward(
    params: &EncoderParams,
    cloud: &PointCloud,
    trace: &EncoderTrace,
    d_feature: &[f64],
    grads: &mut EncoderParams,
) {
    let d = params.output_dim();
    let mut winners: Vec<usize> = trace.argmax.clone();
    winners.sort_unstable();
    winners.dedup();
    let mut acts = params.scratch();
    for &row in &winners {
        let p = cloud.points()[row];
        let input = [p.x, p.y, p.z];
        params.point_activations(input, &mut acts);
        let mut grad: Vec<f64> = (0..d)
            .map(|j| {
                if trace.argmax[j] == row {
                    d_feature[j]
                } else {
                    0.0
                }
            })
            .collect();
        for l in (0..params.layers.len()).rev() {
            for (g, &a) in grad.iter_mut().zip(&acts[l]) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let below: &[f64] = if l == 0 { &input } else { &acts[l - 1] };
            grad = params.layers[l].backward(below, &grad, &mut grads.layers[l], l > 0);
        }
    }
}
