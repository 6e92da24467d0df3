//! Axis-significance histograms and frame stability under resampling.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{frame_set, CanonicalError, FrameSet};
use crate::geometry::{rotation_angle_between, PointCloud};
use crate::ingest::{sample_surface, IngestError, TriangleMesh};
use crate::seed::derive_seed;

pub const RATIO_BINS: usize = 50;

/// Both ratios below this count as a cloud with significant axis order.
pub const SIGNIFICANCE_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no clouds to analyse")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Distribution of `λ₂/λ₁` and `λ₃/λ₂` over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioHistogram {
    /// `RATIO_BINS + 1` uniform edges over `[0, 1]`.
    pub edges: Vec<f64>,
    pub counts_r21: Vec<usize>,
    pub counts_r32: Vec<usize>,
    pub clouds: usize,
    pub mean_r21: f64,
    pub mean_r32: f64,
    /// Fraction of clouds with both ratios below [`SIGNIFICANCE_THRESHOLD`].
    pub significant_fraction: f64,
}

fn bin(r: f64) -> usize {
    ((r * RATIO_BINS as f64) as usize).min(RATIO_BINS - 1)
}

pub fn ratio_stats(clouds: &[PointCloud]) -> Result<RatioHistogram, AnalysisError> {
    if clouds.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let ratios: Vec<(f64, f64)> = clouds
        .par_iter()
        .map(|c| Ok(frame_set(c)?.significance))
        .collect::<Result<_, CanonicalError>>()?;
    let mut counts_r21 = vec![0; RATIO_BINS];
    let mut counts_r32 = vec![0; RATIO_BINS];
    let (mut s21, mut s32, mut significant) = (0.0, 0.0, 0usize);
    for &(a, b) in &ratios {
        counts_r21[bin(a)] += 1;
        counts_r32[bin(b)] += 1;
        s21 += a;
        s32 += b;
        significant += usize::from(a < SIGNIFICANCE_THRESHOLD && b < SIGNIFICANCE_THRESHOLD);
    }
    let n = ratios.len() as f64;
    Ok(RatioHistogram {
        edges: (0..=RATIO_BINS)
            .map(|i| i as f64 / RATIO_BINS as f64)
            .collect(),
        counts_r21,
        counts_r32,
        clouds: ratios.len(),
        mean_r21: s21 / n,
        mean_r32: s32 / n,
        significant_fraction: significant as f64 / n,
    })
}

impl RatioHistogram {
    /// `bin_left,bin_right,count_r21,count_r32`, one row per bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count_r21,count_r32\n");
        for i in 0..RATIO_BINS {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.edges[i],
                self.edges[i + 1],
                self.counts_r21[i],
                self.counts_r32[i]
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("histogram serializes")
    }
}

/// Smallest geodesic angle between the two frame sets over all 8×8 sign
/// pairings whose relative transform is a proper rotation. Improper pairings
/// are left out: a pure axis flip would otherwise count as a zero angle.
pub fn min_frame_angle(a: &FrameSet, b: &FrameSet) -> f64 {
    let mut best = f64::INFINITY;
    for fa in &a.frames {
        for fb in &b.frames {
            let angle =
                rotation_angle_between(&fa.basis, &fb.basis).expect("frames are orthonormal");
            if !angle.reflection {
                best = best.min(angle.radians);
            }
        }
    }
    best
}

/// Frame angle in degrees between two samplings of a mesh, or `None` when
/// either sampling has a degenerate frame.
pub fn sampling_angle(
    mesh: &TriangleMesh,
    points: usize,
    seed_a: u64,
    seed_b: u64,
) -> Result<Option<f64>, AnalysisError> {
    let fa = frame_set(&sample_surface(
        mesh,
        points,
        &mut ChaCha8Rng::seed_from_u64(seed_a),
    )?)?;
    let fb = frame_set(&sample_surface(
        mesh,
        points,
        &mut ChaCha8Rng::seed_from_u64(seed_b),
    )?)?;
    if fa.degenerate() || fb.degenerate() {
        return Ok(None);
    }
    Ok(Some(min_frame_angle(&fa, &fb).to_degrees()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub points: usize,
    pub trials: usize,
    /// Trials where either sampling had tied eigenvalues; excluded below.
    pub degenerate_trials: usize,
    pub angles_deg: Vec<f64>,
    pub mean_deg: Option<f64>,
    pub median_deg: Option<f64>,
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Draws `trials` pairs of independent `n`-point samplings and records the
/// angle between their intrinsic frames.
pub fn frame_stability(
    mesh: &TriangleMesh,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<StabilityReport, AnalysisError> {
    if n < 3 || trials == 0 {
        return Err(AnalysisError::InvalidArgument(format!(
            "need at least 3 points and one trial, got {n} points and {trials} trials"
        )));
    }
    let outcomes: Vec<Option<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            sampling_angle(
                mesh,
                n,
                derive_seed(seed, &[t, 0]),
                derive_seed(seed, &[t, 1]),
            )
        })
        .collect::<Result<_, _>>()?;
    let angles_deg: Vec<f64> = outcomes.iter().flatten().copied().collect();
    Ok(StabilityReport {
        points: n,
        trials,
        degenerate_trials: trials - angles_deg.len(),
        mean_deg: (!angles_deg.is_empty())
            .then(|| angles_deg.iter().sum::<f64>() / angles_deg.len() as f64),
        median_deg: median(&angles_deg),
        angles_deg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshStability {
    pub mesh: String,
    pub report: StabilityReport,
}

/// Stability over a collection of meshes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStability {
    pub meshes: Vec<MeshStability>,
    /// Mean of the per-mesh means, over meshes with at least one valid trial.
    pub dataset_mean_deg: Option<f64>,
    /// Inputs that could not be read or sampled.
    pub skipped: Vec<String>,
}

impl DatasetStability {
    pub fn new(meshes: Vec<MeshStability>, skipped: Vec<String>) -> Self {
        let means: Vec<f64> = meshes.iter().filter_map(|m| m.report.mean_deg).collect();
        Self {
            dataset_mean_deg: (!means.is_empty())
                .then(|| means.iter().sum::<f64>() / means.len() as f64),
            meshes,
            skipped,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mesh,points,trials,degenerate_trials,mean_deg,median_deg\n");
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for m in &self.meshes {
            let r = &m.report;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                m.mesh,
                r.points,
                r.trials,
                r.degenerate_trials,
                fmt(r.mean_deg),
                fmt(r.median_deg)
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stability serializes")
    }
}
