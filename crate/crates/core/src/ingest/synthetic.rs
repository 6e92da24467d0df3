//! Labeled synthetic shape classes used in place of a CAD benchmark.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{normalize_unit_cube, sample_surface, IngestError, LabeledCloud, TriangleMesh};
use crate::geometry::{Point3, PointCloud};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Box,
    Ellipsoid,
    Cylinder,
    LBracket,
    Wedge,
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Ellipsoid => "ellipsoid",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::LBracket => "l-bracket",
            ShapeKind::Wedge => "wedge",
        }
    }

    /// Unit-sized template mesh centered near the origin.
    pub fn template(&self) -> TriangleMesh {
        match self {
            ShapeKind::Box => unit_box_mesh(),
            ShapeKind::Ellipsoid => uv_sphere(12, 24),
            ShapeKind::Cylinder => {
                let ring: Vec<(f64, f64)> = (0..32)
                    .map(|i| {
                        let t = 2.0 * PI * i as f64 / 32.0;
                        (0.5 * t.cos(), 0.5 * t.sin())
                    })
                    .collect();
                // extrude along y then swap y/z so the axis is z
                let m = extrude(&ring);
                TriangleMesh {
                    vertices: m
                        .vertices
                        .iter()
                        .map(|v| Point3::new(v.x, v.z, v.y))
                        .collect(),
                    faces: m.faces,
                }
            }
            ShapeKind::LBracket => {
                let t = 0.35;
                let l = [
                    (0.0, 0.0),
                    (1.0, 0.0),
                    (1.0, t),
                    (t, t),
                    (t, 1.0),
                    (0.0, 1.0),
                ];
                extrude(&l.map(|(x, z)| (x - 0.5, z - 0.5)))
            }
            ShapeKind::Wedge => extrude(&[(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5)]),
        }
    }
}

/// One class of the synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Nominal x/y/z scale applied to the template.
    pub extents: [f64; 3],
    /// Each axis scale is multiplied by a uniform factor in `1 ± scale_jitter`.
    pub scale_jitter: f64,
    /// Std-dev of Gaussian noise added to every sampled point (template units).
    pub noise_sigma: f64,
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, extents: [f64; 3]) -> Self {
        Self {
            kind,
            extents,
            scale_jitter: 0.1,
            noise_sigma: 0.01,
        }
    }

    /// Five classes whose principal-moment signatures are well separated.
    pub fn default_classes() -> Vec<ShapeSpec> {
        vec![
            ShapeSpec::new(ShapeKind::Box, [2.0, 1.3, 0.5]),
            ShapeSpec::new(ShapeKind::Ellipsoid, [2.4, 1.5, 1.0]),
            ShapeSpec::new(ShapeKind::Cylinder, [1.2, 0.9, 3.0]),
            ShapeSpec::new(ShapeKind::LBracket, [2.0, 0.6, 1.8]),
            ShapeSpec::new(ShapeKind::Wedge, [2.2, 0.8, 1.4]),
        ]
    }

    /// Mesh of one random instance.
    pub fn instance<R: Rng + ?Sized>(&self, rng: &mut R) -> TriangleMesh {
        let s = self
            .extents
            .map(|e| e * (1.0 + self.scale_jitter * rng.random_range(-1.0..=1.0)));
        let t = self.kind.template();
        TriangleMesh {
            vertices: t
                .vertices
                .iter()
                .map(|v| Point3::new(v.x * s[0], v.y * s[1], v.z * s[2]))
                .collect(),
            faces: t.faces,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !self.extents.iter().all(|&e| e > 0.0 && e.is_finite())
            || !(0.0..1.0).contains(&self.scale_jitter)
            || self.noise_sigma.is_nan()
            || self.noise_sigma < 0.0
        {
            return Err(IngestError::InvalidArgument(format!(
                "invalid shape spec {self:?}"
            )));
        }
        Ok(())
    }
}

/// Generates `per_class` clouds per spec: sample, jitter, normalize.
///
/// Each instance draws from its own seed derived from `(seed, label, index)`,
/// so the output does not depend on the number of worker threads.
pub fn synthetic_dataset(
    specs: &[ShapeSpec],
    per_class: usize,
    points_per_cloud: usize,
    seed: u64,
) -> Result<Vec<LabeledCloud>, IngestError> {
    if specs.len() < 2 {
        return Err(IngestError::InvalidArgument(
            "need at least two classes".into(),
        ));
    }
    for s in specs {
        s.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|label| (0..per_class).map(move |i| (label, i)))
        .collect();
    jobs.par_iter()
        .map(|&(label, i)| {
            let spec = &specs[label];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[label as u64, i as u64]));
            let mesh = spec.instance(&mut rng);
            let cloud = sample_surface(&mesh, points_per_cloud, &mut rng)?;
            let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
            let jittered = PointCloud::new(
                cloud
                    .points()
                    .iter()
                    .map(|p| {
                        p + Point3::new(
                            noise.sample(&mut rng),
                            noise.sample(&mut rng),
                            noise.sample(&mut rng),
                        )
                    })
                    .collect(),
            )?;
            Ok(LabeledCloud {
                id: format!("{}-{:05}", spec.kind.name(), i),
                label,
                cloud: normalize_unit_cube(&jittered)?,
            })
        })
        .collect()
}

pub fn unit_box_mesh() -> TriangleMesh {
    extrude(&[(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)])
}

/// Extrudes a polygon given in the xz plane along y over `[-0.5, 0.5]`.
/// The polygon must be star-shaped around its first vertex, counter-clockwise.
fn extrude(poly: &[(f64, f64)]) -> TriangleMesh {
    let n = poly.len();
    let mut vertices = Vec::with_capacity(2 * n);
    for y in [-0.5, 0.5] {
        vertices.extend(poly.iter().map(|&(x, z)| Point3::new(x, y, z)));
    }
    let mut faces = Vec::new();
    for i in 1..n - 1 {
        faces.push([0, i + 1, i]);
        faces.push([n, n + i, n + i + 1]);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        faces.push([i, j, n + j]);
        faces.push([i, n + j, n + i]);
    }
    TriangleMesh { vertices, faces }
}

fn uv_sphere(stacks: usize, slices: usize) -> TriangleMesh {
    let mut vertices = vec![Point3::new(0.0, 0.0, 0.5)];
    for i in 1..stacks {
        let phi = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let theta = 2.0 * PI * j as f64 / slices as f64;
            vertices.push(
                0.5 * Point3::new(phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos()),
            );
        }
    }
    vertices.push(Point3::new(0.0, 0.0, -0.5));
    let south = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
        faces.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            faces.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            faces.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    TriangleMesh { vertices, faces }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::frame_set;

    #[test]
    fn templates_are_valid_meshes() {
        for kind in [
            ShapeKind::Box,
            ShapeKind::Ellipsoid,
            ShapeKind::Cylinder,
            ShapeKind::LBracket,
            ShapeKind::Wedge,
        ] {
            let t = kind.template();
            let rebuilt = TriangleMesh::new(t.vertices.clone(), t.faces.clone()).unwrap();
            assert_eq!(
                rebuilt.faces.len(),
                t.faces.len(),
                "{kind:?} has degenerate faces"
            );
        }
        assert!((unit_box_mesh().total_area() - 6.0).abs() < 1e-12);
        let t = 0.35;
        let l_area = 2.0 * (t + t * (1.0 - t)) + 2.0 * 2.0;
        assert!((ShapeKind::LBracket.template().total_area() - l_area).abs() < 1e-12);
    }

    #[test]
    fn counts_and_determinism() {
        let specs = ShapeSpec::default_classes();
        let a = synthetic_dataset(&specs, 20, 64, 9).unwrap();
        assert_eq!(a.len(), 100);
        for label in 0..5 {
            assert_eq!(a.iter().filter(|c| c.label == label).count(), 20);
        }
        let b = synthetic_dataset(&specs, 20, 64, 9).unwrap();
        assert_eq!(a, b);
        let c = synthetic_dataset(&specs, 20, 64, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn same_result_on_one_thread() {
        let specs = ShapeSpec::default_classes();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let single = pool.install(|| synthetic_dataset(&specs, 6, 32, 4).unwrap());
        assert_eq!(single, synthetic_dataset(&specs, 6, 32, 4).unwrap());
    }

    #[test]
    fn rejects_single_class() {
        let specs = vec![ShapeSpec::new(ShapeKind::Box, [1.0, 1.0, 1.0])];
        assert!(synthetic_dataset(&specs, 3, 10, 0).is_err());
    }

    #[test]
    fn class_mean_ratios_are_distinct() {
        let specs = ShapeSpec::default_classes();
        let data = synthetic_dataset(&specs, 40, 512, 1).unwrap();
        let mut means = vec![(0.0, 0.0); specs.len()];
        for c in &data {
            let fs = frame_set(&c.cloud).unwrap();
            assert!(!fs.degenerate());
            means[c.label].0 += fs.significance.0 / 40.0;
            means[c.label].1 += fs.significance.1 / 40.0;
        }
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                let d = (means[i].0 - means[j].0)
                    .abs()
                    .max((means[i].1 - means[j].1).abs());
                assert!(
                    d > 0.05,
                    "classes {i} and {j}: {:?} vs {:?}",
                    means[i],
                    means[j]
                );
            }
        }
    }
}
