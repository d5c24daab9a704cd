//! Synthetic cases rendered from a labelled mesh under a known pose.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidPose};
use crate::meshproc::{write_obj, LabelledMesh, LandmarkFile};
use crate::register::base_rotation;
use crate::render::{
    extract_view_silhouette, render_landmarks, render_silhouette, write_label_png, write_mask_png, Channel,
    LandmarkMap2D, SoftMask,
};
use crate::tooling::{load_bundle, write_json, write_pose, write_rgb_png, CaseBundle, Manifest, RgbImage};

/// Radius of the discs landmark vertices are drawn with (pixels).
const LANDMARK_RADIUS: f64 = 1.0;

/// Largest per-axis tilt of a sampled case away from the anterior-facing view.
const MAX_TILT_DEG: f64 = 20.0;

const BACKGROUND: [u8; 3] = [48, 18, 20];
const TISSUE: [u8; 3] = [150, 72, 60];

/// Where the ground-truth pose of a synthetic case comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseSource {
    Pose(RigidPose),
    Seed(u64),
}

/// A case bundle written to disk together with the pose that generated it.
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub bundle: CaseBundle,
    pub manifest_path: PathBuf,
    pub gt_pose: RigidPose,
    pub seed: Option<u64>,
}

/// Anterior side toward the camera, tilted up to 20° about each axis, centered within
/// ±40 mm × ±30 mm laterally at 400 to 550 mm depth.
pub fn sample_case_pose(mesh: &LabelledMesh, seed: u64) -> RigidPose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = MAX_TILT_DEG.to_radians();
    let tilt = RigidPose::rot_z(rng.gen_range(-d..d))
        .compose(&RigidPose::rot_y(rng.gen_range(-d..d)))
        .compose(&RigidPose::rot_x(rng.gen_range(-d..d)));
    let t = Vector3::new(
        rng.gen_range(-40.0..40.0),
        rng.gen_range(-30.0..30.0),
        rng.gen_range(400.0..550.0),
    );
    tilt.compose(&base_rotation(&mesh.anterior)).with_translation(t)
}

struct Rendered {
    map: LandmarkMap2D,
    mask: SoftMask,
    image: RgbImage,
}

fn render_case(mesh: &LabelledMesh, intr: &CameraIntrinsics, pose: &RigidPose) -> Result<Rendered> {
    let mut map = render_landmarks(mesh, &mesh.labels, pose, intr, LANDMARK_RADIUS)?;
    let mask = render_silhouette(mesh, pose, intr, 1.0, 0.0)?;
    map.paint(
        Channel::Silhouette,
        &extract_view_silhouette(&mask, LANDMARK_RADIUS).channel(Channel::Silhouette),
    );
    let (w, h) = (intr.width as usize, intr.height as usize);
    let mut image = RgbImage::filled(w, h, BACKGROUND);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) >= 0.5 {
                image.set(x, y, TISSUE);
            }
        }
    }
    Ok(Rendered { map, mask, image })
}

/// Writes the files of a case into `dir` and returns the manifest path.
fn write_case(dir: &Path, id: &str, mesh: &LabelledMesh, intr: &CameraIntrinsics, pose: &RigidPose, r: &Rendered) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        id: id.to_owned(),
        mesh: "mesh.obj".into(),
        landmarks3d: "landmarks3d.json".into(),
        image: "image.png".into(),
        landmarks2d: "landmarks2d.png".into(),
        camera: "camera.json".into(),
        pose: Some("pose.json".into()),
        mask: Some("mask.png".into()),
    };
    write_obj(mesh, &dir.join(&manifest.mesh))?;
    write_json(
        &dir.join(&manifest.landmarks3d),
        &LandmarkFile::from_landmarks(&mesh.labels, Some(mesh.anterior)),
    )?;
    write_json(&dir.join(&manifest.camera), intr)?;
    write_rgb_png(&dir.join(&manifest.image), &r.image)?;
    write_label_png(&dir.join(&manifest.landmarks2d), &r.map)?;
    write_mask_png(&dir.join("mask.png"), &r.mask)?;
    write_pose(&dir.join("pose.json"), pose)?;
    let path = dir.join("case.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Renders a case under the given or seeded pose, writes it into `dir` and loads it back.
pub fn synth_case(
    mesh: &LabelledMesh,
    intr: &CameraIntrinsics,
    source: PoseSource,
    dir: &Path,
    id: &str,
) -> Result<SyntheticCase> {
    intr.validate()?;
    if mesh.labels.is_empty() {
        return Err(Error::InvalidArgument("synthetic cases need a labelled mesh".into()));
    }
    let (gt_pose, seed) = match source {
        PoseSource::Pose(p) => (p, None),
        PoseSource::Seed(s) => (sample_case_pose(mesh, s), Some(s)),
    };
    let r = render_case(mesh, intr, &gt_pose)?;
    let manifest_path = write_case(dir, id, mesh, intr, &gt_pose, &r)?;
    let bundle = load_bundle(&manifest_path)?;
    Ok(SyntheticCase {
        bundle,
        manifest_path,
        gt_pose,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshproc::shapes::{liver_blob, BlobParams};
    use crate::metrics::{evaluate_2d, reprojection_error, Score};

    fn mesh() -> LabelledMesh {
        liver_blob(&BlobParams {
            subdivisions: 2,
            ..Default::default()
        })
    }

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(500.0, 500.0, 160.0, 120.0, 320, 240)
    }

    #[test]
    fn seeded_cases_are_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        synth_case(&mesh(), &camera(), PoseSource::Seed(7), a.path(), "s").unwrap();
        synth_case(&mesh(), &camera(), PoseSource::Seed(7), b.path(), "s").unwrap();
        for f in ["mesh.obj", "landmarks3d.json", "camera.json", "image.png", "landmarks2d.png", "mask.png", "pose.json", "case.json"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn bundle_is_self_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let m = mesh();
        let case = synth_case(&m, &camera(), PoseSource::Seed(3), dir.path(), "s").unwrap();
        let b = &case.bundle;
        assert_eq!(b.pose, Some(case.gt_pose));
        let again = render_case(&b.mesh, &b.camera, &case.gt_pose).unwrap();
        assert_eq!(again.map, b.landmarks2d);
        let rep = reprojection_error(&case.gt_pose, b.landmarks3d(), &b.mesh, &b.landmarks2d, &b.camera).unwrap();
        assert!(rep.combined().unwrap() <= 1.0);
        let self_scores = evaluate_2d(&b.landmarks2d, &b.landmarks2d, 0.0, 5.0).unwrap();
        for c in [Channel::Ridge, Channel::Ligament, Channel::Silhouette] {
            let s = self_scores.class(c);
            assert_eq!((s.precision, s.dsc, s.symmetric), (Score::Value(1.0), Score::Value(1.0), Score::Value(0.0)));
        }
    }

    #[test]
    fn out_of_frame_pose_is_an_empty_projection() {
        let dir = tempfile::tempdir().unwrap();
        let pose = RigidPose::from_translation(Vector3::new(0.0, 0.0, -400.0));
        let err = synth_case(&mesh(), &camera(), PoseSource::Pose(pose), dir.path(), "s").unwrap_err();
        assert!(matches!(err, Error::EmptyProjection));
    }
}
