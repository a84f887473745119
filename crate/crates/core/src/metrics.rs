//! Anchor-relative pose error statistics.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{format_pose_line, parse_pose_line, GeometryError, Pose};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("estimated scans {est:?} differ from ground-truth scans {gt:?}")]
    ScanSetMismatch { est: Vec<u32>, gt: Vec<u32> },
    #[error("no scans to compare")]
    Empty,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rmse {
    /// Metres.
    pub translation: f64,
    /// Radians.
    pub rotation: f64,
    /// Number of non-anchor scans averaged.
    pub count: usize,
}

/// Root-mean-square pose error over non-anchor scans, with both sets first
/// expressed relative to their smallest-id (anchor) scan.
pub fn rmse(est: &BTreeMap<u32, Pose>, gt: &BTreeMap<u32, Pose>) -> Result<Rmse, MetricsError> {
    if !est.keys().eq(gt.keys()) {
        return Err(MetricsError::ScanSetMismatch {
            est: est.keys().copied().collect(),
            gt: gt.keys().copied().collect(),
        });
    }
    let (&anchor, _) = est.first_key_value().ok_or(MetricsError::Empty)?;
    let est_inv = est[&anchor].inverse();
    let gt_inv = gt[&anchor].inverse();
    let (mut st, mut sr, mut n) = (0.0, 0.0, 0usize);
    for (id, e) in est {
        if *id == anchor {
            continue;
        }
        let d = (est_inv * *e).ominus(&(gt_inv * gt[id]))?;
        st += d.trans.norm_squared();
        sr += d.rot.norm_squared();
        n += 1;
    }
    if n == 0 {
        return Ok(Rmse {
            translation: 0.0,
            rotation: 0.0,
            count: 0,
        });
    }
    Ok(Rmse {
        translation: (st / n as f64).sqrt(),
        rotation: (sr / n as f64).sqrt(),
        count: n,
    })
}

/// Lines of `id` followed by the 12 row-major pose numbers.
pub fn format_pose_file(poses: &BTreeMap<u32, Pose>) -> String {
    poses
        .iter()
        .map(|(id, p)| format!("{id} {}\n", format_pose_line(p)))
        .collect()
}

pub fn parse_pose_file(text: &str, name: &str) -> Result<BTreeMap<u32, Pose>, MetricsError> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| MetricsError::Parse {
            path: name.to_string(),
            line: idx + 1,
            msg,
        };
        let (id, rest) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| err("expected a scan id and 12 numbers".into()))?;
        let id: u32 = id.parse().map_err(|_| err(format!("bad scan id {id:?}")))?;
        let pose = parse_pose_line(rest).map_err(|e| err(e.to_string()))?;
        if out.insert(id, pose).is_some() {
            return Err(err(format!("duplicate scan id {id}")));
        }
    }
    Ok(out)
}

pub fn read_pose_file(path: &Path) -> Result<BTreeMap<u32, Pose>, MetricsError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: name.clone(),
        source,
    })?;
    parse_pose_file(&text, &name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::testing::{random_axis, random_pose};
    use crate::geometry::{Rotation, Vec3};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(poses: &[Pose]) -> BTreeMap<u32, Pose> {
        poses.iter().enumerate().map(|(i, p)| (i as u32, *p)).collect()
    }

    #[test]
    fn identical_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let a = set(&[random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng)]);
        let r = rmse(&a, &a).unwrap();
        assert_eq!((r.translation, r.count), (0.0, 2));
        assert!(r.rotation < 1e-12);
    }

    #[test]
    fn single_translation_offset() {
        let gt = set(&[Pose::identity(), Pose::from_translation(Vec3::new(1.0, 2.0, 3.0))]);
        let est = set(&[Pose::identity(), Pose::from_translation(Vec3::new(1.1, 2.0, 3.0))]);
        assert_abs_diff_eq!(rmse(&est, &gt).unwrap().translation, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn two_rotation_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let gt = set(&[Pose::identity(), random_pose(&mut rng), random_pose(&mut rng)]);
        let mut est = gt.clone();
        for (id, angle) in [(1u32, 0.03), (2, 0.04)] {
            let p = gt[&id];
            est.insert(id, Pose::new(p.rotation * Rotation::from_axis_angle(&random_axis(&mut rng), angle), p.translation));
        }
        let r = rmse(&est, &gt).unwrap();
        let expected = ((0.03f64.powi(2) + 0.04f64.powi(2)) / 2.0).sqrt();
        assert_abs_diff_eq!(r.rotation, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(r.rotation, 0.0354, epsilon = 5e-5);
        assert!(r.translation < 1e-12);
    }

    #[test]
    fn invariant_to_common_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..50 {
            let gt = set(&(0..4).map(|_| random_pose(&mut rng)).collect::<Vec<_>>());
            let est = set(&(0..4).map(|_| random_pose(&mut rng)).collect::<Vec<_>>());
            let Ok(base) = rmse(&est, &gt) else { continue };
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let moved_est = est.iter().map(|(k, p)| (*k, a * *p)).collect();
            let moved_gt = gt.iter().map(|(k, p)| (*k, b * *p)).collect();
            let r = rmse(&moved_est, &moved_gt).unwrap();
            assert_abs_diff_eq!(r.translation, base.translation, epsilon = 1e-9);
            assert_abs_diff_eq!(r.rotation, base.rotation, epsilon = 1e-9);
        }
    }

    #[test]
    fn mismatched_sets() {
        let a = set(&[Pose::identity(), Pose::identity()]);
        let b = set(&[Pose::identity()]);
        assert!(matches!(rmse(&a, &b), Err(MetricsError::ScanSetMismatch { .. })));
    }

    #[test]
    fn pose_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let a: BTreeMap<u32, Pose> = [(0, random_pose(&mut rng)), (4, random_pose(&mut rng))].into();
        let back = parse_pose_file(&format_pose_file(&a), "mem").unwrap();
        assert_eq!(back.keys().copied().collect::<Vec<_>>(), vec![0, 4]);
        for (k, p) in &a {
            assert!((p.to_homogeneous() - back[k].to_homogeneous()).abs().max() < 1e-12);
        }
        assert!(parse_pose_file("0 1 2 3", "mem").is_err());
    }
}
