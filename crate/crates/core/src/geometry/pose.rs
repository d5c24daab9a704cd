use nalgebra::{Matrix3, Rotation3, Unit, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Rigid transform `p ↦ R·p + t` from the model frame to the camera frame.
/// Translations are in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Tolerance for the orthonormality invariant of [`RigidPose`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, projecting `rotation` onto SO(3).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: nearest_rotation(&rotation),
            translation,
        }
    }

    /// Builds a pose and rejects matrices that are not already rotations.
    pub fn try_new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("pose has non-finite entries".into()));
        }
        if pose.orthonormality_error() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "rotation is not orthonormal (error {:e})",
                pose.orthonormality_error()
            )));
        }
        if pose.is_valid() {
            Ok(pose)
        } else {
            Ok(Self::new(rotation, translation))
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self {
            rotation: exp_so3(&axis_angle),
            translation: t,
        }
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::x() * angle, Vector3::zeros())
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::y() * angle, Vector3::zeros())
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::z() * angle, Vector3::zeros())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn with_translation(mut self, t: Vector3<f64>) -> Self {
        self.translation = t;
        self
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `compose(a, b)` applies `b` first, then `a`.
    pub fn compose(&self, b: &RigidPose) -> RigidPose {
        RigidPose::new(
            self.rotation * b.rotation,
            self.rotation * b.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation.transpose();
        RigidPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    pub fn is_valid(&self) -> bool {
        self.orthonormality_error() < ROTATION_TOLERANCE
            && (self.rotation.determinant() - 1.0).abs() < ROTATION_TOLERANCE
    }

    /// Geodesic angle (radians) between the two rotations.
    pub fn rotation_distance(&self, other: &RigidPose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        // acos loses precision near zero; use the skew part there.
        let s = 0.5
            * Vector3::new(
                rel[(2, 1)] - rel[(1, 2)],
                rel[(0, 2)] - rel[(2, 0)],
                rel[(1, 0)] - rel[(0, 1)],
            )
            .norm();
        s.atan2(c)
    }

    pub fn translation_distance(&self, other: &RigidPose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Left-composed increment in the optimizer chart.
    ///
    /// `delta = (ω, v)` rotates the camera-frame model about `pivot` by `Exp(ω)` and then
    /// translates it by `v`: `X ↦ Exp(ω)(X − pivot) + pivot + v`.
    pub fn perturbed(&self, delta: &Vector6<f64>, pivot: &Vector3<f64>) -> RigidPose {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let r = exp_so3(&omega);
        RigidPose::new(
            r * self.rotation,
            r * (self.translation - pivot) + pivot + v,
        )
    }

    /// Camera-frame position of the model point `p`; used as the rotation pivot.
    pub fn pivot_for(&self, p: &Point3) -> Vector3<f64> {
        self.apply(p).coords
    }

    /// Row-major rotation entries.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }
}

/// Rotation matrix of an axis-angle vector.
pub fn exp_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let angle = omega.norm();
    if angle < 1e-300 {
        return Matrix3::identity();
    }
    Rotation3::from_axis_angle(&Unit::new_unchecked(omega / angle), angle).into_inner()
}

/// Skew-symmetric cross-product matrix `[v]×`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Nearest rotation in the Frobenius sense (polar decomposition).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Matrix3::identity();
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    // A second polish pass brings RᵀR to identity at machine precision.
    let svd = r.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => u * v_t,
        _ => r,
    }
}

/// Row-major JSON representation: `{"R": [9 numbers], "t": [3 numbers]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseFile {
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    pub t: Vec<f64>,
}

impl From<&RigidPose> for PoseFile {
    fn from(p: &RigidPose) -> Self {
        PoseFile {
            r: p.rotation_row_major().to_vec(),
            t: p.translation.iter().copied().collect(),
        }
    }
}

impl TryFrom<PoseFile> for RigidPose {
    type Error = Error;

    fn try_from(f: PoseFile) -> Result<Self> {
        if f.r.len() != 9 || f.t.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "pose needs 9 rotation and 3 translation entries, got {} and {}",
                f.r.len(),
                f.t.len()
            )));
        }
        let rotation = Matrix3::from_row_slice(&f.r);
        RigidPose::try_new(rotation, Vector3::new(f.t[0], f.t[1], f.t[2]))
    }
}
