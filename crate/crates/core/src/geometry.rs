//! Rigid-body geometry on SO(3) and SE(3).
//!
//! Poses map points from a child frame into a parent frame:
//! `p_parent = pose.apply(p_child)`. Tangent vectors ([`Twist`]) are ordered
//! rotation first, translation second, and every 6×6 covariance in the crate
//! uses the same ordering.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Geodesic angles at or above `PI - ANGLE_BRANCH_MARGIN` are outside the
/// principal branch of the logarithm.
pub const ANGLE_BRANCH_MARGIN: f64 = 1e-6;

const SMALL_ANGLE: f64 = 1e-7;
const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation angle {angle} rad is too close to pi for the logarithm")]
    AngleNearPi { angle: f64 },
    #[error("matrix is not a proper rotation (orthonormality error {ortho:.3e}, det {det:.12})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("pose line: {0}")]
    Parse(String),
}

/// Skew-symmetric matrix `[v]x` such that `[v]x w = v × w`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] on the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// An element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates orthonormality and determinant within 1e-9.
    pub fn from_matrix(m: Mat3) -> Result<Self, GeometryError> {
        let ortho = (m * m.transpose() - Mat3::identity()).abs().max();
        let det = m.determinant();
        if ortho > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotARotation { ortho, det });
        }
        Ok(Rotation(m))
    }

    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Closest proper rotation in the Frobenius sense.
    pub fn nearest(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let d = (u * v_t).determinant().signum();
        let correction = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
        Rotation(u * correction * v_t)
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        exp_rotation(&(axis.normalize() * angle))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Geodesic angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let s = 0.5 * vee(&(self.0 - self.0.transpose())).norm();
        let c = 0.5 * (self.0.trace() - 1.0);
        s.atan2(c)
    }

    pub fn log(&self) -> Result<Vec3, GeometryError> {
        log_rotation(self)
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Rodrigues' formula.
pub fn exp_rotation(xi: &Vec3) -> Rotation {
    let theta2 = xi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(xi);
    let (a, b) = if theta < 1e-5 {
        // Taylor expansions of sin(t)/t and (1-cos(t))/t^2.
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Mat3::identity() + k * a + k * k * b)
}

/// `xi = vee(theta / (2 sin theta) * (R - R^T))`, principal branch only.
pub fn log_rotation(r: &Rotation) -> Result<Vec3, GeometryError> {
    let m = r.matrix();
    let skew = vee(&(m - m.transpose()));
    // atan2 keeps theta accurate near 0 and pi where arccos loses digits.
    let theta = (0.5 * skew.norm()).atan2(0.5 * (m.trace() - 1.0));
    if theta >= std::f64::consts::PI - ANGLE_BRANCH_MARGIN {
        return Err(GeometryError::AngleNearPi { angle: theta });
    }
    let factor = if theta < SMALL_ANGLE {
        0.5 + theta * theta / 12.0
    } else {
        theta / (2.0 * theta.sin())
    };
    Ok(skew * factor)
}

/// Tangent-space increment, rotation part first.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    pub rot: Vec3,
    pub trans: Vec3,
}

impl Twist {
    pub fn new(rot: Vec3, trans: Vec3) -> Self {
        Twist { rot, trans }
    }

    pub fn zero() -> Self {
        Twist::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist {
            rot: Vec3::new(v[0], v[1], v[2]),
            trans: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Twist {
            rot: Vec3::new(v[0], v[1], v[2]),
            trans: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rot.x,
            self.rot.y,
            self.rot.z,
            self.trans.x,
            self.trans.y,
            self.trans.z,
        )
    }

    pub fn norm(&self) -> f64 {
        (self.rot.norm_squared() + self.trans.norm_squared()).sqrt()
    }
}

impl Mul<f64> for Twist {
    type Output = Twist;
    fn mul(self, s: f64) -> Twist {
        Twist::new(self.rot * s, self.trans * s)
    }
}

/// A rigid transform `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    /// Group exponential used by [`retract`]: the increment's translation is
    /// taken verbatim.
    pub fn from_twist(delta: &Twist) -> Self {
        Pose::new(exp_rotation(&delta.rot), delta.trans)
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation.0 * x + self.translation
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.0 * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.inverse();
        Pose {
            rotation: rt,
            translation: -(rt.0 * self.translation),
        }
    }

    /// `self ⊖ other`.
    pub fn ominus(&self, other: &Pose) -> Result<Twist, GeometryError> {
        pose_ominus(self, other)
    }

    pub fn retract(&self, delta: &Twist) -> Pose {
        retract(self, delta)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.0);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation.0;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    /// Accepts any matrix within 1e-6 of a rotation and snaps it onto SO(3);
    /// text round trips lose the last few bits of orthonormality.
    pub fn from_row_major(v: &[f64; 12]) -> Result<Pose, GeometryError> {
        let m = Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let ortho = (m * m.transpose() - Mat3::identity()).abs().max();
        let det = m.determinant();
        if ortho > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(GeometryError::NotARotation { ortho, det });
        }
        let rotation = if ortho <= ORTHONORMAL_TOL && (det - 1.0).abs() <= ORTHONORMAL_TOL {
            Rotation(m)
        } else {
            Rotation::nearest(&m)
        };
        Ok(Pose::new(rotation, Vec3::new(v[3], v[7], v[11])))
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// `[log(Rot(b^-1 a))_v, Trans(b^-1 a)]`.
pub fn pose_ominus(a: &Pose, b: &Pose) -> Result<Twist, GeometryError> {
    let rel = b.inverse().compose(a);
    Ok(Twist::new(log_rotation(&rel.rotation)?, rel.translation))
}

/// Right-multiplicative update `p · Exp(delta)`.
pub fn retract(p: &Pose, delta: &Twist) -> Pose {
    p.compose(&Pose::from_twist(delta))
}

impl fmt::Display for Pose {
    /// Twelve row-major values of `[R | t]`, shortest round-trip formatting.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_row_major();
        for (k, x) in v.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{x}")?;
        }
        Ok(())
    }
}

pub fn format_pose_line(p: &Pose) -> String {
    p.to_string()
}

/// Parses 12 whitespace-separated numbers (scientific notation allowed).
pub fn parse_pose_line(line: &str) -> Result<Pose, GeometryError> {
    let values = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|e| GeometryError::Parse(format!("bad number {tok:?}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let arr: [f64; 12] = values
        .as_slice()
        .try_into()
        .map_err(|_| GeometryError::Parse(format!("expected 12 values, got {}", values.len())))?;
    if arr.iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::Parse("non-finite value".into()));
    }
    Pose::from_row_major(&arr)
}
