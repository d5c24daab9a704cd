use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, RigidPose};
use crate::meshproc::LabelledMesh;

/// Rotation turning the model's anterior direction toward the camera (camera −z).
///
/// This is the smallest such rotation; when anterior points straight away from the
/// camera, a half turn about x is used so that model +y ends up pointing image-up.
pub fn base_rotation(anterior: &Vector3<f64>) -> RigidPose {
    let a = anterior.normalize();
    let target = -Vector3::z();
    let axis = a.cross(&target);
    let s = axis.norm();
    let c = a.dot(&target);
    if s < 1e-12 {
        return if c > 0.0 { RigidPose::identity() } else { RigidPose::rot_x(PI) };
    }
    RigidPose::from_axis_angle(axis / s * s.atan2(c), Vector3::zeros())
}

/// Per-axis rotation angles (x, y, z) of a random start, each uniform in (−90°, 90°).
pub fn sample_axis_rotations(rng: &mut impl Rng) -> [f64; 3] {
    let mut draw = || loop {
        let v = rng.gen_range(-FRAC_PI_2..FRAC_PI_2);
        if v > -FRAC_PI_2 {
            return v;
        }
    };
    [draw(), draw(), draw()]
}

/// Random start: anterior toward the camera, then independent rotations about the
/// camera axes, at a random depth on the optical axis. The mesh is assumed centered.
pub fn init_random_pose(mesh: &LabelledMesh, depth_range: (f64, f64), seed: u64) -> RigidPose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [ax, ay, az] = sample_axis_rotations(&mut rng);
    let (lo, hi) = depth_range;
    let depth = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let spin = exp_so3(&(Vector3::z() * az)) * exp_so3(&(Vector3::y() * ay)) * exp_so3(&(Vector3::x() * ax));
    let base = base_rotation(&mesh.anterior);
    RigidPose::new(spin * base.rotation(), Vector3::new(0.0, 0.0, depth))
}

/// Decorrelated seed for restart `index` of a run seeded with `base`.
pub fn restart_seed(base: u64, index: usize) -> u64 {
    // SplitMix64 finalizer.
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The configured canonical starting pose.
pub fn init_canonical_pose(configured: Option<&RigidPose>) -> Result<RigidPose> {
    configured.copied().ok_or(Error::MissingCanonicalPose)
}

/// Chordal mean of the rotations (projected back onto SO(3)) with the mean translation.
pub fn average_poses(poses: &[RigidPose]) -> Result<RigidPose> {
    if poses.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = poses.len() as f64;
    let r: Matrix3<f64> = poses.iter().map(|p| p.rotation()).sum::<Matrix3<f64>>() / n;
    let t: Vector3<f64> = poses.iter().map(|p| p.translation()).sum::<Vector3<f64>>() / n;
    if poses.iter().all(|p| p.rotation() == poses[0].rotation()) {
        return Ok(RigidPose::try_new(*poses[0].rotation(), t).expect("valid pose"));
    }
    Ok(RigidPose::new(r, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshproc::shapes::icosphere;

    #[test]
    fn fixed_seed_is_reproducible() {
        let m = icosphere(1);
        assert_eq!(init_random_pose(&m, (300.0, 800.0), 7), init_random_pose(&m, (300.0, 800.0), 7));
        assert_ne!(init_random_pose(&m, (300.0, 800.0), 7), init_random_pose(&m, (300.0, 800.0), 8));
    }

    #[test]
    fn sampled_rotations_stay_below_a_quarter_turn() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut extreme: f64 = 0.0;
        for _ in 0..1000 {
            for a in sample_axis_rotations(&mut rng) {
                assert!(a.abs() < FRAC_PI_2);
                extreme = extreme.max(a.abs());
            }
        }
        // The range is actually explored.
        assert!(extreme > 0.95 * FRAC_PI_2);
    }

    #[test]
    fn degenerate_depth_range_sits_on_the_axis() {
        let p = init_random_pose(&icosphere(1), (500.0, 500.0), 3);
        assert_eq!(*p.translation(), Vector3::new(0.0, 0.0, 500.0));
        assert!(p.is_valid());
    }

    #[test]
    fn base_rotation_faces_anterior_to_the_camera() {
        for a in [Vector3::z(), -Vector3::z(), Vector3::x(), Vector3::new(0.3, -0.2, 0.9)] {
            let r = base_rotation(&a);
            assert!((r.rotation() * a.normalize() + Vector3::z()).norm() < 1e-12, "{a:?}");
        }
        // Default frame: superior (+y) maps to image-up (camera −y).
        let r = base_rotation(&Vector3::z());
        assert!((r.rotation() * Vector3::y() + Vector3::y()).norm() < 1e-12);
    }

    #[test]
    fn averaging_examples() {
        let p = RigidPose::from_axis_angle(Vector3::new(0.2, 0.4, -0.1), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(average_poses(&[p, p]).unwrap(), p);
        let a = RigidPose::rot_z(10f64.to_radians());
        let b = RigidPose::rot_z(-10f64.to_radians());
        let m = average_poses(&[a, b]).unwrap();
        assert!(m.rotation_distance(&RigidPose::identity()) < 1e-9);
        assert!(matches!(average_poses(&[]), Err(Error::EmptySet)));
    }

    #[test]
    fn canonical_pose_must_be_configured() {
        assert!(matches!(init_canonical_pose(None), Err(Error::MissingCanonicalPose)));
        let p = RigidPose::rot_x(0.3);
        assert_eq!(init_canonical_pose(Some(&p)).unwrap(), p);
    }
}
