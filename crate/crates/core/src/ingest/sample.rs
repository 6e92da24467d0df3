use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{IngestError, TriangleMesh};
use crate::geometry::{Point3, PointCloud};

/// `n` points uniform over the mesh surface: a face is picked with probability
/// proportional to its area, then a point uniform inside it via square-root
/// barycentric coordinates.
pub fn sample_surface<R: Rng + ?Sized>(
    mesh: &TriangleMesh,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud, IngestError> {
    if n == 0 {
        return Err(IngestError::InvalidArgument(
            "sample count must be positive".into(),
        ));
    }
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|i| mesh.face_area(i)).collect();
    let picker = WeightedIndex::new(&areas).map_err(|_| IngestError::ZeroArea)?;
    let points = (0..n)
        .map(|_| {
            let f = mesh.faces[picker.sample(rng)];
            let (a, b, c) = (
                mesh.vertices[f[0]],
                mesh.vertices[f[1]],
                mesh.vertices[f[2]],
            );
            let s = rng.random::<f64>().sqrt();
            let r2: f64 = rng.random();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect();
    Ok(PointCloud::new(points)?)
}

/// Centers the cloud on its centroid, then scales uniformly so the largest
/// absolute coordinate is 1.
pub fn normalize_unit_cube(cloud: &PointCloud) -> Result<PointCloud, IngestError> {
    let n = cloud.len() as f64;
    let centroid: Point3 = cloud.points().iter().sum::<Point3>() / n;
    let extent = cloud
        .points()
        .iter()
        .map(|p| (p - centroid).abs().max())
        .fold(0.0, f64::max);
    if extent == 0.0 {
        return Err(IngestError::Degenerate("all points coincide".into()));
    }
    Ok(cloud.map_points(|p| (p - centroid) / extent))
}
