//! Intrinsic frames from the covariance eigenbasis and the eight
//! sign-resolved canonical poses of a cloud.

use thiserror::Error;

use crate::eigen3::{eigen_symmetric3, EigenError, SymMatrix3};
use crate::geometry::{Mat3, Point3, PointCloud};

/// Number of sign-resolved frames per cloud.
pub const FRAME_COUNT: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CanonicalError {
    #[error("point cloud is empty")]
    Empty,
    #[error("need at least 3 points to define a frame, got {0}")]
    TooFewPoints(usize),
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

/// Orthonormal basis whose columns are covariance eigenvectors ordered by
/// descending eigenvalue, anchored at the cloud mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntrinsicFrame {
    pub basis: Mat3,
    pub origin: Point3,
    /// Bit `k` set means column `k` is negated relative to the base frame.
    pub sign_code: u8,
}

impl IntrinsicFrame {
    pub fn is_proper(&self) -> bool {
        self.basis.determinant() > 0.0
    }
}

/// The eight sign variants of one intrinsic frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    /// Indexed by sign code.
    pub frames: [IntrinsicFrame; FRAME_COUNT],
    pub eigenvalues: [f64; 3],
    /// `(λ₂/λ₁, λ₃/λ₂)`; a ratio with a zero denominator is reported as 1.
    pub significance: (f64, f64),
    pub degenerate_pairs: [bool; 2],
}

impl FrameSet {
    pub fn base(&self) -> &IntrinsicFrame {
        &self.frames[0]
    }

    pub fn degenerate(&self) -> bool {
        self.degenerate_pairs[0] || self.degenerate_pairs[1]
    }
}

/// A cloud expressed in one intrinsic frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalCloud {
    pub points: PointCloud,
    pub source_sign_code: u8,
}

pub fn mean(cloud: &PointCloud) -> Result<Point3, CanonicalError> {
    if cloud.is_empty() {
        return Err(CanonicalError::Empty);
    }
    Ok(mean_of(cloud.points()))
}

fn mean_of(points: &[Point3]) -> Point3 {
    points.iter().sum::<Point3>() / points.len() as f64
}

/// Population covariance, divisor `n`.
pub fn covariance(cloud: &PointCloud) -> Result<SymMatrix3, CanonicalError> {
    let m = mean(cloud)?;
    Ok(covariance_about(cloud.points(), &m))
}

fn covariance_about(points: &[Point3], m: &Point3) -> SymMatrix3 {
    let mut c = [0.0f64; 6];
    for p in points {
        let d = p - m;
        c[0] += d.x * d.x;
        c[1] += d.x * d.y;
        c[2] += d.x * d.z;
        c[3] += d.y * d.y;
        c[4] += d.y * d.z;
        c[5] += d.z * d.z;
    }
    let n = points.len() as f64;
    SymMatrix3::new(c[0] / n, c[1] / n, c[2] / n, c[3] / n, c[4] / n, c[5] / n)
}

/// Flip a column so that its largest-magnitude component is positive.
/// Ties go to the lowest index.
fn normalize_column_sign(basis: &mut Mat3, k: usize) {
    let col = basis.column(k);
    let mut best = 0;
    for i in 1..3 {
        if col[i].abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        basis.column_mut(k).neg_mut();
    }
}

pub fn flip_columns(basis: &Mat3, sign_code: u8) -> Mat3 {
    let mut b = *basis;
    for k in 0..3 {
        if sign_code & (1 << k) != 0 {
            b.column_mut(k).neg_mut();
        }
    }
    b
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

pub fn frame_set(cloud: &PointCloud) -> Result<FrameSet, CanonicalError> {
    if cloud.len() < 3 {
        return Err(CanonicalError::TooFewPoints(cloud.len()));
    }
    let origin = mean_of(cloud.points());
    let eig = eigen_symmetric3(&covariance_about(cloud.points(), &origin))?;
    let mut base = eig.vectors;
    for k in 0..3 {
        normalize_column_sign(&mut base, k);
    }
    let frames = std::array::from_fn(|s| IntrinsicFrame {
        basis: flip_columns(&base, s as u8),
        origin,
        sign_code: s as u8,
    });
    let [l1, l2, l3] = eig.values;
    Ok(FrameSet {
        frames,
        eigenvalues: eig.values,
        significance: (ratio(l2, l1), ratio(l3, l2)),
        degenerate_pairs: eig.degenerate,
    })
}

/// `p ↦ Uᵀ(p − origin)` for every point.
pub fn express_in_frame(cloud: &PointCloud, frame: &IntrinsicFrame) -> CanonicalCloud {
    let ut = frame.basis.transpose();
    CanonicalCloud {
        points: cloud.map_points(|p| ut * (p - frame.origin)),
        source_sign_code: frame.sign_code,
    }
}

/// The cloud in all eight frames, in ascending sign-code order.
pub fn canonical_set(cloud: &PointCloud) -> Result<[CanonicalCloud; FRAME_COUNT], CanonicalError> {
    let frames = frame_set(cloud)?;
    Ok(canonical_set_from(cloud, &frames))
}

/// Same as [`canonical_set`] for an already computed frame set. The base pose
/// is projected once and the other seven are exact sign flips of it.
pub fn canonical_set_from(cloud: &PointCloud, frames: &FrameSet) -> [CanonicalCloud; FRAME_COUNT] {
    let base = express_in_frame(cloud, frames.base());
    std::array::from_fn(|s| {
        let s = s as u8;
        let sign = [0, 1, 2].map(|k| if s & (1 << k) != 0 { -1.0 } else { 1.0 });
        CanonicalCloud {
            points: base
                .points
                .map_points(|p| Point3::new(sign[0] * p.x, sign[1] * p.y, sign[2] * p.z)),
            source_sign_code: s,
        }
    })
}

/// Max-norm distance between two equally long clouds.
pub fn max_abs_diff(a: &PointCloud, b: &PointCloud) -> f64 {
    assert_eq!(a.len(), b.len());
    a.points()
        .iter()
        .zip(b.points())
        .map(|(p, q)| (p - q).abs().max())
        .fold(0.0, f64::max)
}
