#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use markreg::cloud_io::PointCloud;
use markreg::geometry::Pose;
use markreg::synth::GroundTruth;

/// Fraction of the points of `a` that fall in a voxel occupied by `b`.
/// Both clouds must be in the same frame.
pub fn voxel_overlap(a: &PointCloud, b: &PointCloud, voxel: f64) -> f64 {
    let key = |p: &PointCloud, k: usize| {
        let x = p.points[k].position / voxel;
        (x.x.floor() as i64, x.y.floor() as i64, x.z.floor() as i64)
    };
    let occupied: HashSet<_> = (0..b.len()).map(|k| key(b, k)).collect();
    let hits = (0..a.len()).filter(|&k| occupied.contains(&key(a, k))).count();
    hits as f64 / a.len().max(1) as f64
}

/// Largest overlap between any two scans, in either direction, after
/// placing every cloud with its true pose.
pub fn max_pairwise_overlap(clouds: &[PointCloud], gt: &GroundTruth, voxel: f64) -> f64 {
    let placed: Vec<PointCloud> = clouds
        .iter()
        .map(|c| c.transformed(&gt.scan_poses[c.scan_id as usize]))
        .collect();
    let mut worst = 0.0f64;
    for i in 0..placed.len() {
        for j in 0..placed.len() {
            if i != j {
                worst = worst.max(voxel_overlap(&placed[i], &placed[j], voxel));
            }
        }
    }
    worst
}

pub fn truth_map(gt: &GroundTruth) -> BTreeMap<u32, Pose> {
    gt.scan_poses.iter().enumerate().map(|(i, p)| (i as u32, *p)).collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
