//! Square-tag detection in intensity images and the per-scan marker
//! observations built from it.

pub mod adaptive;
pub mod detector;
pub mod dictionary;
pub mod render;

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adaptive::{adaptive_threshold_search, AppendMode, MemoryQueue, SearchParams};
pub use detector::{binarize, detect_tags, refine_corners, BinaryImage, Detection2D, DetectorConfig};
pub use dictionary::TagDictionary;

use crate::cloud_io::PointCloud;
use crate::geometry::{Pose, Vec3};
use crate::pose_svd::{solve_marker_pose, CanonicalCorners, PoseSvdError};
use crate::projection::{lift_quad_on_plane, IntensityImage, ProjectionError};

/// Tolerance of the square-shape check, as a fraction of the side length.
pub const SQUARE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ObservationError {
    #[error("corners deviate from a {side} m square by {deviation} m")]
    NotSquare { side: f64, deviation: f64 },
    #[error(transparent)]
    Pose(#[from] PoseSvdError),
}

/// A decoded marker in one scan: lifted corners, their fitted pose and the
/// residual of that fit.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkerObservation {
    pub marker_id: u32,
    pub scan_id: u32,
    /// Corners in the scan frame, in canonical order.
    pub corners3d: [Vec3; 4],
    /// Marker-to-scan transform.
    pub pose: Pose,
    /// Sum of squared corner residuals at `pose`, in m².
    pub e_pp: f64,
}

impl MarkerObservation {
    /// Fits a pose to `corners3d`, rejecting corner sets that are not a
    /// square of side `canonical.side` within [`SQUARE_TOLERANCE`].
    pub fn from_corners(
        scan_id: u32,
        marker_id: u32,
        corners3d: [Vec3; 4],
        canonical: &CanonicalCorners,
    ) -> Result<Self, ObservationError> {
        let deviation = square_deviation(&corners3d, canonical.side);
        if deviation > SQUARE_TOLERANCE * canonical.side {
            return Err(ObservationError::NotSquare {
                side: canonical.side,
                deviation,
            });
        }
        Self::fit(scan_id, marker_id, corners3d, canonical)
    }

    /// Fits a pose to `corners3d` without the square-shape check.
    pub fn fit(
        scan_id: u32,
        marker_id: u32,
        corners3d: [Vec3; 4],
        canonical: &CanonicalCorners,
    ) -> Result<Self, ObservationError> {
        let (pose, e_pp) = solve_marker_pose(canonical, &corners3d)?;
        Ok(MarkerObservation {
            marker_id,
            scan_id,
            corners3d,
            pose,
            e_pp,
        })
    }

    pub fn to_record(&self) -> DetectionRecord {
        DetectionRecord {
            scan_id: self.scan_id,
            marker_id: self.marker_id,
            corners3d: self.corners3d.map(|c| [c.x, c.y, c.z]),
            e_pp: Some(self.e_pp),
        }
    }
}

/// Largest absolute difference between the six pairwise corner distances
/// and those of a square with side `side`.
pub fn square_deviation(corners: &[Vec3; 4], side: f64) -> f64 {
    let diag = side * std::f64::consts::SQRT_2;
    let mut worst = 0.0f64;
    for a in 0..4 {
        for b in a + 1..4 {
            let expected = if b - a == 2 { diag } else { side };
            worst = worst.max(((corners[a] - corners[b]).norm() - expected).abs());
        }
    }
    worst
}

/// Lifts each detection's corners to 3D. Detections without range support
/// are dropped with a warning; order of the survivors is preserved.
pub fn lift_detections(
    dets: &[Detection2D],
    img: &IntensityImage,
    cloud: &PointCloud,
) -> Vec<(Detection2D, [Vec3; 4])> {
    dets.iter()
        .filter_map(|d| match lift_quad_on_plane(img, cloud, &d.corners) {
            Ok(c) => Some((d.clone(), c)),
            Err(e @ ProjectionError::NoRangeSupport { .. }) => {
                warn!("scan {}: dropping marker {}: {e}", cloud.scan_id, d.id);
                None
            }
            Err(e) => {
                warn!("scan {}: cannot lift marker {}: {e}", cloud.scan_id, d.id);
                None
            }
        })
        .collect()
}

/// One entry of the detection import/export file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub scan_id: u32,
    pub marker_id: u32,
    pub corners3d: [[f64; 3]; 4],
    /// Ignored on import; recomputed from the corners.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_pp: Option<f64>,
}

impl DetectionRecord {
    pub fn corners(&self) -> [Vec3; 4] {
        self.corners3d.map(|c| Vec3::new(c[0], c[1], c[2]))
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: non-finite corner in scan {scan_id} marker {marker_id}")]
    NonFinite {
        path: String,
        scan_id: u32,
        marker_id: u32,
    },
}

pub fn write_records(path: &Path, records: &[DetectionRecord]) -> Result<(), RecordError> {
    let text = serde_json::to_string_pretty(records).map_err(|source| RecordError::Json {
        path: path.display().to_string(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|source| RecordError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_records(path: &Path) -> Result<Vec<DetectionRecord>, RecordError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| RecordError::Io {
        path: name.clone(),
        source,
    })?;
    let records: Vec<DetectionRecord> =
        serde_json::from_str(&text).map_err(|source| RecordError::Json {
            path: name.clone(),
            source,
        })?;
    if let Some(bad) = records
        .iter()
        .find(|r| r.corners3d.iter().flatten().any(|v| !v.is_finite()))
    {
        return Err(RecordError::NonFinite {
            path: name,
            scan_id: bad.scan_id,
            marker_id: bad.marker_id,
        });
    }
    Ok(records)
}
