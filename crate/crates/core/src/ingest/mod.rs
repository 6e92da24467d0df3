//! Mesh and point-cloud input: OFF meshes, xyz text, JSON-lines manifests,
//! area-uniform surface sampling and the synthetic shape dataset.

mod off;
mod sample;
pub mod synthetic;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, PointCloud};
use crate::seed::seed_from_key;

pub use off::{parse_off, OffError, TriangleMesh};
pub use sample::{normalize_unit_cube, sample_surface};
pub use synthetic::{synthetic_dataset, ShapeKind, ShapeSpec};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Off(#[from] OffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<IngestError>,
    },
    #[error("xyz line {line}: {message}")]
    Xyz { line: usize, message: String },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("mesh has zero total area")]
    ZeroArea,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl IngestError {
    fn in_file(self, path: &Path) -> Self {
        IngestError::File {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

/// A cloud with its class index and a stable identifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCloud {
    pub id: String,
    pub label: usize,
    pub cloud: PointCloud,
}

pub fn read_text(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Whitespace-separated `x y z` rows; extra columns are ignored, `#` starts a comment.
pub fn parse_xyz(text: &str) -> Result<PointCloud, IngestError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(IngestError::Xyz {
                line: i + 1,
                message: "expected three coordinates".into(),
            });
        }
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = toks[k].parse().map_err(|_| IngestError::Xyz {
                line: i + 1,
                message: format!("invalid number '{}'", toks[k]),
            })?;
        }
        rows.push(p);
    }
    Ok(PointCloud::from_rows(&rows)?)
}

/// One point per line, shortest round-trip float formatting.
pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

/// How mesh files referenced by path are turned into clouds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSampling {
    pub points: usize,
    pub seed: u64,
}

impl Default for MeshSampling {
    fn default() -> Self {
        Self {
            points: 2048,
            seed: 0,
        }
    }
}

/// Loads a cloud from an OFF mesh (sampled, then normalized) or an xyz file.
/// The sampling seed is derived from `key` so results do not depend on load order.
pub fn load_cloud(
    path: &Path,
    key: &str,
    sampling: MeshSampling,
) -> Result<PointCloud, IngestError> {
    let text = read_text(path)?;
    let is_off = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("off"))
        .unwrap_or(false)
        || text.trim_start().starts_with("OFF");
    let result = if is_off {
        parse_off(&text)
            .map_err(IngestError::from)
            .and_then(|mesh| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed_from_key(sampling.seed, key));
                normalize_unit_cube(&sample_surface(&mesh, sampling.points, &mut rng)?)
            })
    } else {
        parse_xyz(&text)
    };
    result.map_err(|e| e.in_file(path))
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh, IngestError> {
    parse_off(&read_text(path)?).map_err(|e| IngestError::from(e).in_file(path))
}

/// One JSON-lines manifest record: a cloud given inline or by file path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 3]>>,
}

/// Parses a manifest; relative paths resolve against `base_dir`.
pub fn parse_manifest(
    text: &str,
    base_dir: &Path,
    sampling: MeshSampling,
) -> Result<Vec<LabeledCloud>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| IngestError::Manifest {
            line: line_no,
            message,
        };
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let cloud = match (&rec.path, rec.points) {
            (Some(p), None) => load_cloud(&base_dir.join(p), &rec.id, sampling)?,
            (None, Some(rows)) => PointCloud::from_rows(&rows).map_err(|e| bad(e.to_string()))?,
            _ => return Err(bad("exactly one of 'path' or 'points' is required".into())),
        };
        out.push(LabeledCloud {
            id: rec.id,
            label: rec.label,
            cloud,
        });
    }
    Ok(out)
}

pub fn read_manifest(
    path: &Path,
    sampling: MeshSampling,
) -> Result<Vec<LabeledCloud>, IngestError> {
    let text = read_text(path)?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")), sampling)
}

/// Manifest text with every cloud inlined.
pub fn format_manifest(clouds: &[LabeledCloud]) -> String {
    let mut out = String::new();
    for c in clouds {
        let rec = ManifestRecord {
            id: c.id.clone(),
            label: c.label,
            path: None,
            points: Some(c.cloud.to_rows()),
        };
        out.push_str(&serde_json::to_string(&rec).expect("manifest record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xyz_round_trip_and_errors() {
        let cloud = PointCloud::from_rows(&[[0.1, -2.5, 1e-17], [3.0, 4.0, 5.0]]).unwrap();
        assert_eq!(parse_xyz(&format_xyz(&cloud)).unwrap(), cloud);
        let with_extra = "# header\n1 2 3 0 0 1\n\n4 5 6\n";
        assert_eq!(parse_xyz(with_extra).unwrap().len(), 2);
        assert!(matches!(
            parse_xyz("1 2\n"),
            Err(IngestError::Xyz { line: 1, .. })
        ));
        assert!(matches!(
            parse_xyz("1 2 3\n1 b 3\n"),
            Err(IngestError::Xyz { line: 2, .. })
        ));
        assert!(matches!(
            parse_xyz(""),
            Err(IngestError::Geometry(GeometryError::EmptyCloud))
        ));
    }

    #[test]
    fn manifest_inline_round_trip() {
        let clouds = vec![
            LabeledCloud {
                id: "a".into(),
                label: 0,
                cloud: PointCloud::from_rows(&[[0.0, 1.0, 2.0]]).unwrap(),
            },
            LabeledCloud {
                id: "b".into(),
                label: 3,
                cloud: PointCloud::from_rows(&[[0.5, 0.25, -1.0], [1.0, 1.0, 1.0]]).unwrap(),
            },
        ];
        let text = format_manifest(&clouds);
        assert_eq!(text.lines().count(), 2);
        let back = parse_manifest(&text, Path::new("."), MeshSampling::default()).unwrap();
        assert_eq!(back, clouds);
    }

    #[test]
    fn manifest_errors_carry_line() {
        let text = "{\"id\":\"a\",\"label\":0,\"points\":[[0,0,0]]}\n{\"id\":\"b\",\"label\":1}\n";
        assert!(matches!(
            parse_manifest(text, Path::new("."), MeshSampling::default()),
            Err(IngestError::Manifest { line: 2, .. })
        ));
        let text = "not json\n";
        assert!(matches!(
            parse_manifest(text, Path::new("."), MeshSampling::default()),
            Err(IngestError::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn manifest_loads_meshes_by_path() {
        let dir = std::env::temp_dir().join(format!("pcari-manifest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("box.off"), synthetic::unit_box_mesh().to_off()).unwrap();
        let text = "{\"id\":\"m1\",\"label\":2,\"path\":\"box.off\"}\n";
        let sampling = MeshSampling {
            points: 128,
            seed: 4,
        };
        let a = parse_manifest(text, &dir, sampling).unwrap();
        let b = parse_manifest(text, &dir, sampling).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].cloud.len(), 128);
        assert_eq!(a[0].label, 2);
        let missing = "{\"id\":\"m2\",\"label\":0,\"path\":\"nope.off\"}\n";
        assert!(matches!(
            parse_manifest(missing, &dir, sampling),
            Err(IngestError::Io { .. })
        ));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
