//! 3D points, clouds, rotations and the angle metric between frames.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used when validating that a matrix is a rotation.
pub const ROTATION_TOL: f64 = 1e-12;

/// Looser orthogonality tolerance accepted by [`rotation_angle_between`];
/// frames coming out of the eigensolver are orthonormal to about 1e-10.
pub const FRAME_ORTHO_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("matrix is not orthogonal (max deviation {deviation:e})")]
    NotOrthogonal { deviation: f64 },
    #[error("matrix is not a proper rotation (det = {det})")]
    NotProper { det: f64 },
}

/// Ordered, non-empty list of finite 3D points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if let Some(index) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self, GeometryError> {
        Self::new(rows.iter().map(|r| Point3::new(r[0], r[1], r[2])).collect())
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn to_rows(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [p.x, p.y, p.z]).collect()
    }

    /// Map every point through `f`, keeping order. The caller guarantees finiteness.
    pub(crate) fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
        }
    }

    pub fn translated(&self, t: &Point3) -> Self {
        self.map_points(|p| p + t)
    }
}

impl TryFrom<Vec<[f64; 3]>> for PointCloud {
    type Error = GeometryError;
    fn try_from(rows: Vec<[f64; 3]>) -> Result<Self, Self::Error> {
        Self::from_rows(&rows)
    }
}

impl From<PointCloud> for Vec<[f64; 3]> {
    fn from(c: PointCloud) -> Self {
        c.to_rows()
    }
}

/// A proper orthogonal 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Validates orthogonality and unit determinant to [`ROTATION_TOL`].
    pub fn new(m: Mat3) -> Result<Self, GeometryError> {
        Self::with_tolerance(m, ROTATION_TOL)
    }

    pub fn with_tolerance(m: Mat3, tol: f64) -> Result<Self, GeometryError> {
        let deviation = orthogonality_error(&m);
        if deviation.is_nan() || deviation >= tol {
            return Err(GeometryError::NotOrthogonal { deviation });
        }
        let det = m.determinant();
        if det.is_nan() || (det - 1.0).abs() >= tol {
            return Err(GeometryError::NotProper { det });
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn compose(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * other.0)
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.0 * p
    }
}

/// `max |MᵀM − I|` over entries.
pub fn orthogonality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).abs().max()
}

/// Haar-uniform rotation from a uniformly sampled unit quaternion (Shoemake).
pub fn random_rotation_so3<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (s2, c2) = (2.0 * PI * u2).sin_cos();
    let (s3, c3) = (2.0 * PI * u3).sin_cos();
    quaternion_to_rotation(b * c3, a * s2, a * c2, b * s3)
}

/// Rotation matrix of the quaternion `w + xi + yj + zk`; the input is normalized first.
pub fn quaternion_to_rotation(w: f64, x: f64, y: f64, z: f64) -> RotationMatrix {
    let n = (w * w + x * x + y * y + z * z).sqrt();
    let (w, x, y, z) = (w / n, x / n, y / n, z / n);
    RotationMatrix(Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Rotation about the z axis by `theta` radians.
pub fn azimuthal_rotation(theta: f64) -> RotationMatrix {
    let (s, c) = theta.sin_cos();
    RotationMatrix(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}

/// Uniform azimuthal rotation, theta in [0, 2π).
pub fn random_azimuthal<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    azimuthal_rotation(rng.random::<f64>() * 2.0 * PI)
}

pub fn apply_rotation(r: &RotationMatrix, cloud: &PointCloud) -> PointCloud {
    cloud.map_points(|p| r.apply(p))
}

/// Geodesic angle between two orthonormal frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameAngle {
    /// Radians in `[0, π]`.
    pub radians: f64,
    /// Set when `AᵀB` has determinant −1. The angle is then that of the
    /// closest proper rotation with the smallest angle, `arccos((tr + 1) / 2)`.
    pub reflection: bool,
}

impl FrameAngle {
    pub fn degrees(&self) -> f64 {
        self.radians.to_degrees()
    }
}

/// Angle of the relative rotation `AᵀB`.
///
/// For an improper relative matrix `M = R_a(θ)·(I − 2aaᵀ)` every reflection
/// `H` gives `MH` at the same Frobenius distance from `M`; the smallest angle
/// among them is attained at `H = I − 2aaᵀ` and equals θ.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> Result<FrameAngle, GeometryError> {
    for m in [a, b] {
        let deviation = orthogonality_error(m);
        if deviation.is_nan() || deviation >= FRAME_ORTHO_TOL {
            return Err(GeometryError::NotOrthogonal { deviation });
        }
    }
    let rel = a.transpose() * b;
    let reflection = rel.determinant() < 0.0;
    // −M = R_a(θ + π) when M = R_a(θ)·(I − 2aaᵀ)
    let radians = if reflection {
        PI - proper_angle(&-rel)
    } else {
        proper_angle(&rel)
    };
    Ok(FrameAngle {
        radians,
        reflection,
    })
}

/// Rotation angle of a proper orthogonal matrix. Equal to
/// `arccos((tr − 1) / 2)`, but `atan2` of the skew part keeps full
/// precision near 0 and π.
fn proper_angle(m: &Mat3) -> f64 {
    let skew = Point3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    (0.5 * skew.norm()).atan2(0.5 * (m.trace() - 1.0))
}

/// Maximum absolute entry of the pairwise distance difference between two equally sized clouds.
pub fn pairwise_distance_deviation(a: &PointCloud, b: &PointCloud) -> f64 {
    assert_eq!(a.len(), b.len());
    let (pa, pb) = (a.points(), b.points());
    let mut worst = 0.0f64;
    for i in 0..pa.len() {
        for j in i + 1..pa.len() {
            let d = ((pa[i] - pa[j]).norm() - (pb[i] - pb[j]).norm()).abs();
            worst = worst.max(d);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let pts = (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn cloud_rejects_empty_and_nan() {
        assert_eq!(PointCloud::new(vec![]), Err(GeometryError::EmptyCloud));
        let err = PointCloud::from_rows(&[[0.0, 0.0, 0.0], [f64::NAN, 0.0, 0.0]]).unwrap_err();
        assert_eq!(err, GeometryError::NonFinite { index: 1 });
    }

    #[test]
    fn so3_sampling_is_deterministic_and_valid() {
        let a = random_rotation_so3(&mut ChaCha8Rng::seed_from_u64(7));
        let b = random_rotation_so3(&mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let r = random_rotation_so3(&mut rng);
            assert!(orthogonality_error(r.matrix()) < 1e-12);
            assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
            RotationMatrix::new(*r.matrix()).unwrap();
        }
    }

    /// Mean of the Haar angle density (1 − cos θ)/π on [0, π], by Simpson quadrature.
    fn haar_mean_angle_quadrature() -> f64 {
        let n = 2000;
        let h = PI / n as f64;
        let f = |t: f64| t * (1.0 - t.cos()) / PI;
        let mut s = f(0.0) + f(PI);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn haar_mean_angle_matches_quadrature() {
        let oracle = haar_mean_angle_quadrature();
        assert!(
            (oracle - (PI / 2.0 + 2.0 / PI)).abs() < 1e-9,
            "{}",
            oracle.to_degrees()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let r = random_rotation_so3(&mut rng);
            sum += rotation_angle_between(&Mat3::identity(), r.matrix())
                .unwrap()
                .radians;
        }
        let mean = sum / n as f64;
        assert!(
            (mean - oracle).abs().to_degrees() < 1.0,
            "mean {}°",
            mean.to_degrees()
        );
    }

    #[test]
    fn azimuthal_cases() {
        assert_eq!(*azimuthal_rotation(0.0).matrix(), Mat3::identity());
        let p = azimuthal_rotation(PI / 2.0).apply(&Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).abs().max() < 1e-15);
        let full = azimuthal_rotation(2.0 * PI);
        assert!((full.matrix() - Mat3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn apply_rotation_cases() {
        let cloud = PointCloud::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(apply_rotation(&RotationMatrix::identity(), &cloud), cloud);
        let half = apply_rotation(&azimuthal_rotation(PI), &cloud);
        assert!(
            (half.points()[0] - Point3::new(-1.0, -2.0, 3.0))
                .abs()
                .max()
                < 1e-14
        );

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = random_cloud(&mut rng, 60);
        let r = random_rotation_so3(&mut rng);
        let rotated = apply_rotation(&r, &cloud);
        assert!(pairwise_distance_deviation(&cloud, &rotated) < 1e-12);
        let c0: Point3 = cloud.points().iter().sum::<Point3>() / 60.0;
        let c1: Point3 = rotated.points().iter().sum::<Point3>() / 60.0;
        assert!((c0.norm() - c1.norm()).abs() < 1e-12);
    }

    /// Independent route: axis-angle from the skew part via atan2.
    fn axis_angle_oracle(rel: &Mat3) -> f64 {
        let s = Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        );
        let sin2 = s.norm(); // 2 sin θ
        let cos2 = rel.trace() - 1.0; // 2 cos θ
        sin2.atan2(cos2)
    }

    #[test]
    fn angle_between_cases() {
        let a = Mat3::identity();
        assert_eq!(rotation_angle_between(&a, &a).unwrap().radians, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = random_rotation_so3(&mut rng);
        let b = azimuthal_rotation(PI / 3.0).compose(&base);
        let got = rotation_angle_between(base.matrix(), b.matrix()).unwrap();
        assert!((got.radians - PI / 3.0).abs() < 1e-12);
        assert!(!got.reflection);

        for _ in 0..500 {
            let a = random_rotation_so3(&mut rng);
            let b = random_rotation_so3(&mut rng);
            let got = rotation_angle_between(a.matrix(), b.matrix()).unwrap();
            let back = rotation_angle_between(b.matrix(), a.matrix()).unwrap();
            let oracle = axis_angle_oracle(&(a.matrix().transpose() * b.matrix()));
            assert!(
                (got.radians - oracle).abs() < 1e-7,
                "{} vs {}",
                got.radians,
                oracle
            );
            assert_eq!(got.radians, back.radians);
        }
    }

    #[test]
    fn angle_between_flags_reflections() {
        let flip = Mat3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let got = rotation_angle_between(&Mat3::identity(), &flip).unwrap();
        assert!(got.reflection);
        assert!(got.radians.abs() < 1e-12);
        // rotary reflection: reflect through the xy plane then rotate by 40° about z
        let m = azimuthal_rotation(40f64.to_radians()).matrix() * flip;
        let got = rotation_angle_between(&Mat3::identity(), &m).unwrap();
        assert!(got.reflection);
        assert!((got.degrees() - 40.0).abs() < 1e-10);
    }

    #[test]
    fn angle_between_rejects_non_orthogonal() {
        let m = Mat3::identity() * 1.1;
        assert!(matches!(
            rotation_angle_between(&Mat3::identity(), &m),
            Err(GeometryError::NotOrthogonal { .. })
        ));
    }
}
