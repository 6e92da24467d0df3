//! Eigendecomposition of symmetric 3x3 matrices.
//!
//! Eigenvalues come from the closed-form trigonometric solution of the
//! characteristic cubic. Eigenvectors are built the robust way: the vector of
//! the best separated eigenvalue from cross products of rows of `A − λI`, the
//! middle one from a 2x2 problem in its orthogonal complement, and the last as
//! a cross product. A single cyclic Jacobi sweep on `UᵀAU` then polishes both
//! values and vectors.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Mat3;

/// Relative ratio above which two adjacent eigenvalues count as tied.
pub const DEGENERACY_RATIO: f64 = 1.0 - 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// Symmetric 3x3 matrix stored as its upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl SymMatrix3 {
    pub fn new(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64, zz: f64) -> Self {
        Self {
            xx,
            xy,
            xz,
            yy,
            yz,
            zz,
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn identity() -> Self {
        Self::diagonal(1.0, 1.0, 1.0)
    }

    pub fn diagonal(a: f64, b: f64, c: f64) -> Self {
        Self::new(a, 0.0, 0.0, b, 0.0, c)
    }

    /// Symmetric part `(M + Mᵀ)/2` of an arbitrary matrix.
    pub fn from_matrix(m: &Mat3) -> Self {
        let h = |i: usize, j: usize| 0.5 * (m[(i, j)] + m[(j, i)]);
        Self::new(m[(0, 0)], h(0, 1), h(0, 2), m[(1, 1)], h(1, 2), m[(2, 2)])
    }

    pub fn to_matrix(&self) -> Mat3 {
        Mat3::new(
            self.xx, self.xy, self.xz, //
            self.xy, self.yy, self.yz, //
            self.xz, self.yz, self.zz,
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn scaled(&self, s: f64) -> Self {
        Self::new(
            self.xx * s,
            self.xy * s,
            self.xz * s,
            self.yy * s,
            self.yz * s,
            self.zz * s,
        )
    }

    /// `R·M·Rᵀ`.
    pub fn conjugated(&self, r: &Mat3) -> Self {
        Self::from_matrix(&(r * self.to_matrix() * r.transpose()))
    }
}

/// Descending eigenvalues with matching unit eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenDecomposition {
    /// `λ₁ ≥ λ₂ ≥ λ₃`.
    pub values: [f64; 3],
    /// Column `k` is the eigenvector of `values[k]`.
    pub vectors: Mat3,
    /// `degenerate[k]` is set when `values[k]` and `values[k + 1]` are tied.
    pub degenerate: [bool; 2],
}

impl EigenDecomposition {
    pub fn vector(&self, k: usize) -> Vector3<f64> {
        self.vectors.column(k).into_owned()
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate[0] || self.degenerate[1]
    }

    /// `U·diag(λ)·Uᵀ`.
    pub fn reconstruct(&self) -> Mat3 {
        let d = Mat3::from_diagonal(&Vector3::from(self.values));
        self.vectors * d * self.vectors.transpose()
    }
}

/// Tie test for an adjacent eigenvalue pair `hi ≥ lo`.
pub fn is_tied(hi: f64, lo: f64, largest: f64) -> bool {
    let eps = 1e-12 * largest.max(1.0);
    (lo + eps) / (hi + eps) > DEGENERACY_RATIO
}

pub fn eigen_symmetric3(m: &SymMatrix3) -> Result<EigenDecomposition, EigenError> {
    if !m.is_finite() {
        return Err(EigenError::NonFinite);
    }
    let max_abs = m.max_abs();
    let (values, vectors) = if max_abs == 0.0 {
        ([0.0; 3], Mat3::identity())
    } else {
        let a = m.scaled(1.0 / max_abs);
        let (_, vecs) = closed_form(&a);
        let (vals, vecs) = jacobi_polish(&a, vecs);
        (vals.map(|v| v * max_abs), vecs)
    };

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let mut sorted = order.map(|i| values[i]);
    let largest = sorted[0].abs();
    for v in sorted.iter_mut() {
        if *v < 0.0 && *v >= -1e-12 * largest.max(1.0) {
            *v = 0.0;
        }
    }
    let vectors = Mat3::from_columns(&[
        vectors.column(order[0]),
        vectors.column(order[1]),
        vectors.column(order[2]),
    ]);
    let degenerate = [
        is_tied(sorted[0], sorted[1], largest),
        is_tied(sorted[1], sorted[2], largest),
    ];
    Ok(EigenDecomposition {
        values: sorted,
        vectors,
        degenerate,
    })
}

/// Closed-form eigenpairs of a matrix scaled so that its largest entry is 1.
/// Returns ascending eigenvalues.
fn closed_form(a: &SymMatrix3) -> ([f64; 3], Mat3) {
    let off = a.xy * a.xy + a.xz * a.xz + a.yz * a.yz;
    if off == 0.0 {
        return ([a.xx, a.yy, a.zz], Mat3::identity());
    }
    let q = (a.xx + a.yy + a.zz) / 3.0;
    let b00 = a.xx - q;
    let b11 = a.yy - q;
    let b22 = a.zz - q;
    let p = ((b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * off) / 6.0).sqrt();
    let c00 = b11 * b22 - a.yz * a.yz;
    let c01 = a.xy * b22 - a.yz * a.xz;
    let c02 = a.xy * a.yz - b11 * a.xz;
    let det = (b00 * c00 - a.xy * c01 + a.xz * c02) / (p * p * p);
    let half_det = (0.5 * det).clamp(-1.0, 1.0);
    let angle = half_det.acos() / 3.0;
    let beta2 = 2.0 * angle.cos();
    let beta0 = 2.0 * (angle + 2.0 * PI / 3.0).cos();
    let beta1 = -(beta0 + beta2);
    let vals = [q + p * beta0, q + p * beta1, q + p * beta2];

    let (v0, v1, v2) = if half_det >= 0.0 {
        let v2 = isolated_vector(a, vals[2]);
        let v1 = middle_vector(a, &v2, vals[1]);
        (v1.cross(&v2), v1, v2)
    } else {
        let v0 = isolated_vector(a, vals[0]);
        let v1 = middle_vector(a, &v0, vals[1]);
        (v0, v1, v0.cross(&v1))
    };
    (vals, Mat3::from_columns(&[v0, v1, v2]))
}

fn isolated_vector(a: &SymMatrix3, lambda: f64) -> Vector3<f64> {
    let r0 = Vector3::new(a.xx - lambda, a.xy, a.xz);
    let r1 = Vector3::new(a.xy, a.yy - lambda, a.yz);
    let r2 = Vector3::new(a.xz, a.yz, a.zz - lambda);
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = candidates
        .iter()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))
        .unwrap();
    let n = best.norm();
    if n > 0.0 {
        best / n
    } else {
        Vector3::x()
    }
}

/// Unit vector pair spanning the plane orthogonal to the unit vector `w`.
fn orthogonal_complement(w: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let u = if w.x.abs() > w.y.abs() {
        let inv = 1.0 / (w.x * w.x + w.z * w.z).sqrt();
        Vector3::new(-w.z * inv, 0.0, w.x * inv)
    } else {
        let inv = 1.0 / (w.y * w.y + w.z * w.z).sqrt();
        Vector3::new(0.0, w.z * inv, -w.y * inv)
    };
    (u, w.cross(&u))
}

fn middle_vector(a: &SymMatrix3, known: &Vector3<f64>, lambda: f64) -> Vector3<f64> {
    let m = a.to_matrix();
    let (u, v) = orthogonal_complement(known);
    let au = m * u;
    let av = m * v;
    let mut m00 = u.dot(&au) - lambda;
    let mut m01 = u.dot(&av);
    let mut m11 = v.dot(&av) - lambda;
    let (a00, a01, a11) = (m00.abs(), m01.abs(), m11.abs());
    if a00 >= a11 {
        if a00.max(a01) == 0.0 {
            return u;
        }
        if a00 >= a01 {
            m01 /= m00;
            m00 = 1.0 / (1.0 + m01 * m01).sqrt();
            m01 *= m00;
        } else {
            m00 /= m01;
            m01 = 1.0 / (1.0 + m00 * m00).sqrt();
            m00 *= m01;
        }
        m01 * u - m00 * v
    } else {
        if a11.max(a01) == 0.0 {
            return u;
        }
        if a11 >= a01 {
            m01 /= m11;
            m11 = 1.0 / (1.0 + m01 * m01).sqrt();
            m01 *= m11;
        } else {
            m11 /= m01;
            m01 = 1.0 / (1.0 + m11 * m11).sqrt();
            m11 *= m01;
        }
        m11 * u - m01 * v
    }
}

/// One cyclic Jacobi sweep over `UᵀAU`; eigenvalues are read off its diagonal.
fn jacobi_polish(a: &SymMatrix3, u: Mat3) -> ([f64; 3], Mat3) {
    let mut b = u.transpose() * a.to_matrix() * u;
    let mut v = u;
    for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
        let bpq = b[(p, q)];
        if bpq == 0.0 {
            continue;
        }
        let theta = (b[(q, q)] - b[(p, p)]) / (2.0 * bpq);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        let mut j = Mat3::identity();
        j[(p, p)] = c;
        j[(q, q)] = c;
        j[(p, q)] = s;
        j[(q, p)] = -s;
        b = j.transpose() * b * j;
        v *= j;
    }
    ([b[(0, 0)], b[(1, 1)], b[(2, 2)]], v)
}
