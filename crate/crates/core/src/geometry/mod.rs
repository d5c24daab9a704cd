//! Camera model, rigid-pose algebra and 3D→2D projection.

mod camera;
mod pose;

pub use camera::{CameraIntrinsics, UNDISTORT_MAX_ITERATIONS, UNDISTORT_TOLERANCE_PX};
pub use pose::{exp_so3, nearest_rotation, skew, PoseFile, RigidPose, ROTATION_TOLERANCE};

use crate::error::Result;

pub type Point2 = nalgebra::Point2<f64>;
pub type Point3 = nalgebra::Point3<f64>;

/// `R·p + t`.
pub fn apply_pose(pose: &RigidPose, p: &Point3) -> Point3 {
    pose.apply(p)
}

/// `compose(a, b)(p) = a(b(p))`.
pub fn compose(a: &RigidPose, b: &RigidPose) -> RigidPose {
    a.compose(b)
}

/// Projects a model point to distorted pixel coordinates.
///
/// The result may lie outside the image; callers decide whether to clip.
pub fn project(intr: &CameraIntrinsics, pose: &RigidPose, p: &Point3) -> Result<Point2> {
    intr.project_camera_point(&pose.apply(p).coords)
}

/// Removes lens distortion from a pixel position.
pub fn undistort(intr: &CameraIntrinsics, u: &Point2) -> Result<Point2> {
    intr.undistort(u)
}
