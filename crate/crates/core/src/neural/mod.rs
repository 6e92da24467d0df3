//! Dense float64 network pieces with hand-written reverse mode: a shared
//! per-point encoder with max pooling, interchangeable frame-fusion
//! strategies, a two-layer classifier and softmax cross-entropy.

mod classifier;
mod encoder;
pub mod fusion;
pub mod gradcheck;
mod model;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classifier::{classify, loss_softmax_ce, softmax, ClassifierParams};
pub use encoder::{encode, EncoderParams};
pub use fusion::{
    attention_fuse, attention_weights, fuse_pool, fusion_by_name, max_pool, FrameFusion,
    FusionParams, FUSION_NAMES,
};
pub use gradcheck::{finite_difference_check, relative_error, FdReport, GradCheckable};
pub use model::{
    backward, backward_scaled, batch_loss, Example, Gradients, Model, ModelObjective, ModelParams,
    ModelSpec,
};

/// A fixed-length feature vector.
pub type Feature = Vec<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("unknown fusion strategy '{0}' (known: {known})", known = FUSION_NAMES.join(", "))]
    UnknownFusion(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
}

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NeuralError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NeuralError::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn random_normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| dist.sample(rng)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Fully connected layer `y = xW + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Tensor::zeros(&[input, output]),
            b: Tensor::zeros(&[output]),
        }
    }

    /// He-normal weights, zero bias.
    pub fn he<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w: Tensor::random_normal(&[input, output], (2.0 / input as f64).sqrt(), rng),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape[1]
    }

    /// Writes `xW + b` into `out`; zero inputs are skipped.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.output_dim();
        out.copy_from_slice(&self.b.data);
        for (k, &a) in x.iter().enumerate() {
            if a != 0.0 {
                let row = &self.w.data[k * m..(k + 1) * m];
                for (o, w) in out.iter_mut().zip(row) {
                    *o += a * w;
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.forward_into(x, &mut out);
        out
    }

    /// Accumulates `dW += x ⊗ dy`, `db += dy` and returns `dx = W·dy`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, want_dx: bool) -> Vec<f64> {
        let m = self.output_dim();
        for (g, d) in grad.b.data.iter_mut().zip(dy) {
            *g += d;
        }
        for (k, &a) in x.iter().enumerate() {
            if a != 0.0 {
                let row = &mut grad.w.data[k * m..(k + 1) * m];
                for (g, d) in row.iter_mut().zip(dy) {
                    *g += a * d;
                }
            }
        }
        if !want_dx {
            return Vec::new();
        }
        (0..x.len())
            .map(|k| {
                let row = &self.w.data[k * m..(k + 1) * m];
                row.iter().zip(dy).map(|(w, d)| w * d).sum()
            })
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }
}

pub(crate) fn relu_in_place(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}
