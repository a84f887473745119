//! Closed-form rigid fit of a marker's canonical corners to observed corners.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::geometry::{Pose, Rotation, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseSvdError {
    #[error("observed corners are collinear or coincident")]
    DegenerateCorners,
}

/// Corners of a square marker of side `side` in its own frame, in the
/// order (−,−), (+,−), (+,+), (−,+).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanonicalCorners {
    pub side: f64,
    pub corners: [Vec3; 4],
}

impl CanonicalCorners {
    pub fn new(side: f64) -> Self {
        let h = side / 2.0;
        CanonicalCorners {
            side,
            corners: [
                Vec3::new(-h, -h, 0.0),
                Vec3::new(h, -h, 0.0),
                Vec3::new(h, h, 0.0),
                Vec3::new(-h, h, 0.0),
            ],
        }
    }
}

/// Sum of squared distances between `pose`-mapped canonical corners and the
/// observed ones, in m².
pub fn point_to_point_error(pose: &Pose, canonical: &CanonicalCorners, observed: &[Vec3; 4]) -> f64 {
    canonical
        .corners
        .iter()
        .zip(observed)
        .map(|(c, o)| (pose.apply(c) - o).norm_squared())
        .sum()
}

/// Relative singular-value threshold below which the observed spread is
/// treated as rank ≤ 1.
const RANK_TOLERANCE: f64 = 1e-9;

/// Least-squares rigid transform mapping the canonical corners onto
/// `observed`, with its residual.
pub fn solve_marker_pose(
    canonical: &CanonicalCorners,
    observed: &[Vec3; 4],
) -> Result<(Pose, f64), PoseSvdError> {
    let pose = kabsch(&canonical.corners, observed)?;
    let e_pp = point_to_point_error(&pose, canonical, observed);
    Ok((pose, e_pp))
}

/// Kabsch alignment of ordered point sets: returns `T` minimising
/// `Σ‖T·src_k − dst_k‖²` with `det R = +1`.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Result<Pose, PoseSvdError> {
    assert_eq!(src.len(), dst.len(), "point sets must be index aligned");
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;

    let spread = dst
        .iter()
        .map(|p| (p - cd) * (p - cd).transpose())
        .sum::<Matrix3<f64>>();
    let sv = spread.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sv.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= RANK_TOLERANCE * ev[0] {
        return Err(PoseSvdError::DegenerateCorners);
    }

    // Cross-covariance H = Σ (src−cs)(dst−cd)ᵀ; R = V·D·Uᵀ.
    let h = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (s - cs) * (d - cd).transpose())
        .sum::<Matrix3<f64>>();
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let r = v * correction * u.transpose();
    let rotation = Rotation::from_matrix_unchecked(r);
    let translation = cd - r * cs;
    Ok(Pose::new(rotation, translation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::testing::random_pose;
    use crate::geometry::Twist;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const L: f64 = 0.164;

    fn max_pose_diff(a: &Pose, b: &Pose) -> f64 {
        (a.to_homogeneous() - b.to_homogeneous()).abs().max()
    }

    #[test]
    fn canonical_layout() {
        let c = CanonicalCorners::new(L);
        assert_eq!(c.corners[0], Vec3::new(-0.082, -0.082, 0.0));
        assert_eq!(c.corners[2], Vec3::new(0.082, 0.082, 0.0));
    }

    #[test]
    fn identity_fit() {
        let c = CanonicalCorners::new(L);
        let (pose, e) = solve_marker_pose(&c, &c.corners).unwrap();
        assert!(max_pose_diff(&pose, &Pose::identity()) < 1e-15);
        assert!(e < 1e-30);
    }

    #[test]
    fn unit_translation_error() {
        let c = CanonicalCorners::new(L);
        let shifted = c.corners.map(|p| p + Vec3::x());
        assert_abs_diff_eq!(
            point_to_point_error(&Pose::identity(), &c, &shifted),
            4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn recovers_random_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = CanonicalCorners::new(0.692);
        for _ in 0..1000 {
            let t = random_pose(&mut rng);
            let (est, e) = solve_marker_pose(&c, &c.corners.map(|p| t.apply(&p))).unwrap();
            assert!(max_pose_diff(&est, &t) < 1e-9);
            assert!(e < 1e-18);
        }
    }

    #[test]
    fn beats_random_competitors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let small = Normal::new(0.0, 0.05).unwrap();
        let c = CanonicalCorners::new(L);
        for _ in 0..20 {
            let t = random_pose(&mut rng);
            let obs = c.corners.map(|p| t.apply(&p) + Vec3::from_fn(|_, _| noise.sample(&mut rng)));
            let (est, e) = solve_marker_pose(&c, &obs).unwrap();
            assert_abs_diff_eq!(e, point_to_point_error(&est, &c, &obs), epsilon = 1e-15);
            for _ in 0..100 {
                let delta = Twist::from_slice(&[0; 6].map(|_| small.sample(&mut rng)));
                let other = est.retract(&delta);
                assert!(e <= point_to_point_error(&other, &c, &obs));
            }
        }
    }

    #[test]
    fn noisy_translation_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = 0.005;
        let noise = Normal::new(0.0, sigma).unwrap();
        let c = CanonicalCorners::new(L);
        let mut errs = Vec::new();
        for _ in 0..1000 {
            let t = random_pose(&mut rng);
            let obs = c.corners.map(|p| t.apply(&p) + Vec3::from_fn(|_, _| noise.sample(&mut rng)));
            let (est, e) = solve_marker_pose(&c, &obs).unwrap();
            assert!(e > 0.0);
            errs.push((est.translation - t.translation).norm());
        }
        // The centroid of four corners has per-axis std σ/2, so its error
        // norm has RMS σ·√3/2.
        let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        assert!(rms < 1.5 * sigma, "rms {rms}");
        assert!((rms - sigma * 3f64.sqrt() / 2.0).abs() < 0.1 * sigma, "rms {rms}");
    }

    #[test]
    fn mirrored_corners_stay_proper() {
        let c = CanonicalCorners::new(L);
        // Reflect a non-planar-symmetric set through the x = 0 plane.
        let mut obs = c.corners.map(|p| Vec3::new(-p.x, p.y, p.z + 1.0));
        obs[0].z += 0.01;
        let (est, e) = solve_marker_pose(&c, &obs).unwrap();
        assert_abs_diff_eq!(est.rotation.matrix().determinant(), 1.0, epsilon = 1e-12);
        let naive = Pose::from_translation(Vec3::new(0.0, 0.0, 1.0));
        assert!(e > 0.0);
        assert!(e <= point_to_point_error(&naive, &c, &obs) + 1e-15);
    }

    #[test]
    fn equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let c = CanonicalCorners::new(L);
        for _ in 0..100 {
            let t = random_pose(&mut rng);
            let a = random_pose(&mut rng);
            let obs = c.corners.map(|p| t.apply(&p) + Vec3::from_fn(|_, _| noise.sample(&mut rng)));
            let (est, _) = solve_marker_pose(&c, &obs).unwrap();
            let (moved, _) = solve_marker_pose(&c, &obs.map(|p| a.apply(&p))).unwrap();
            assert!(max_pose_diff(&moved, &(a * est)) < 1e-9);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let c = CanonicalCorners::new(L);
        let line = [0.0, 1.0, 2.0, 3.0].map(|s| Vec3::new(s, 2.0 * s, 0.5));
        assert_eq!(solve_marker_pose(&c, &line), Err(PoseSvdError::DegenerateCorners));
        let point = [Vec3::new(1.0, 1.0, 1.0); 4];
        assert_eq!(solve_marker_pose(&c, &point), Err(PoseSvdError::DegenerateCorners));
    }
}
