//! Case bundles on disk, synthetic case generation, overlays and the command-line front
//! end.

pub mod cli;
mod image;
mod overlay;
mod polyline;
mod run;
mod synth;

pub use image::{read_rgb_png, write_rgb_png, RgbImage};
pub use overlay::{render_overlay, Overlay, LIGAMENT_COLOR, RIDGE_COLOR, SILHOUETTE_COLOR};
pub use polyline::{read_polyline_json, PolylineFile, DEFAULT_POLYLINE_DILATION};
pub use run::{default_start, register_bundle, register_problem, PnpSettings, RegisterMethod, RegistrationOutcome};
pub use synth::{sample_case_pose, synth_case, PoseSource, SyntheticCase};

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PoseFile, RigidPose};
use crate::meshproc::{read_obj, LabelledMesh, LandmarkFile, LandmarkSet3D};
use crate::register::RegistrationProblem;
use crate::render::{read_label_png, read_mask_png, LandmarkMap2D, SoftMask};

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingAsset { path: path.into() },
        _ => Error::io(path, e),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e.to_string()))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_camera(path: &Path) -> Result<CameraIntrinsics> {
    let intr: CameraIntrinsics = read_json(path)?;
    intr.validate().map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(intr)
}

pub fn read_pose(path: &Path) -> Result<RigidPose> {
    let file: PoseFile = read_json(path)?;
    RigidPose::try_from(file).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_pose(path: &Path, pose: &RigidPose) -> Result<()> {
    write_json(path, &PoseFile::from(pose))
}

/// Reads a landmark file and checks its indices against `vertex_count`.
pub fn read_landmarks(path: &Path, vertex_count: usize) -> Result<LandmarkFile> {
    let file: LandmarkFile = read_json(path)?;
    file.landmarks()
        .validate(vertex_count)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(file)
}

/// Reads a mesh and attaches the landmarks and anterior direction of a landmark file.
pub fn read_labelled_mesh(mesh_path: &Path, landmarks_path: &Path) -> Result<LabelledMesh> {
    let mesh = read_obj(mesh_path)?;
    let file = read_landmarks(landmarks_path, mesh.vertex_count())?;
    let mut mesh = mesh.with_labels(file.landmarks())?;
    if let Some(a) = file.anterior {
        mesh = mesh
            .with_anterior(a.into())
            .map_err(|e| Error::parse(landmarks_path, e.to_string()))?;
    }
    Ok(mesh)
}

/// Reads a 2D landmark map: polyline JSON (rasterized and dilated) or a label PNG.
pub fn read_landmark_map(path: &Path, dilation: f64) -> Result<LandmarkMap2D> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        read_polyline_json(path, dilation)
    } else {
        read_label_png(path)
    }
}

/// One case on disk: asset paths relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Patient and frame, e.g. `"4_7"`.
    pub id: String,
    pub mesh: PathBuf,
    pub landmarks3d: PathBuf,
    pub image: PathBuf,
    pub landmarks2d: PathBuf,
    pub camera: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PathBuf>,
    /// Liver-region mask for silhouette registration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

/// A loaded and cross-validated case.
#[derive(Debug, Clone)]
pub struct CaseBundle {
    pub id: String,
    /// Directory the manifest paths are relative to.
    pub root: PathBuf,
    pub manifest: Manifest,
    /// Mesh carrying the case's 3D landmarks.
    pub mesh: LabelledMesh,
    pub image: RgbImage,
    pub landmarks2d: LandmarkMap2D,
    pub camera: CameraIntrinsics,
    pub pose: Option<RigidPose>,
    pub mask: Option<SoftMask>,
}

impl CaseBundle {
    pub fn landmarks3d(&self) -> &LandmarkSet3D {
        &self.mesh.labels
    }

    pub fn asset(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    pub fn problem(&self) -> Result<RegistrationProblem> {
        let p = RegistrationProblem::new(
            self.mesh.clone(),
            self.mesh.labels.clone(),
            self.landmarks2d.clone(),
            self.camera,
        )?;
        match &self.mask {
            Some(m) => p.with_silhouette(m.clone()),
            None => Ok(p),
        }
    }
}

fn mismatch(path: &Path, what: &str, got: (usize, usize), camera: &CameraIntrinsics) -> Error {
    Error::DimensionMismatch {
        path: path.into(),
        message: format!(
            "{what} is {}x{} but the camera is {}x{}",
            got.0, got.1, camera.width, camera.height
        ),
    }
}

/// Assets of a registration given as separate files, without an image.
#[derive(Debug, Clone, Copy)]
pub struct ProblemPaths<'a> {
    pub mesh: &'a Path,
    pub landmarks3d: &'a Path,
    pub landmarks2d: &'a Path,
    pub camera: &'a Path,
    pub mask: Option<&'a Path>,
}

/// Loads and cross-checks the assets of a registration problem.
pub fn load_problem(paths: &ProblemPaths<'_>, dilation: f64) -> Result<RegistrationProblem> {
    let camera = read_camera(paths.camera)?;
    let dims = (camera.width as usize, camera.height as usize);
    let mesh = read_labelled_mesh(paths.mesh, paths.landmarks3d)?;
    let map = read_landmark_map(paths.landmarks2d, dilation)?;
    if (map.width(), map.height()) != dims {
        return Err(mismatch(paths.landmarks2d, "label map", (map.width(), map.height()), &camera));
    }
    let labels = mesh.labels.clone();
    let problem = RegistrationProblem::new(mesh, labels, map, camera)?;
    match paths.mask {
        Some(path) => {
            let m = read_mask_png(path)?;
            if (m.width(), m.height()) != dims {
                return Err(mismatch(path, "mask", (m.width(), m.height()), &camera));
            }
            problem.with_silhouette(m)
        }
        None => Ok(problem),
    }
}

/// Loads every asset a manifest references and cross-checks image dimensions against the
/// camera and landmark indices against the mesh.
pub fn load_bundle(manifest_path: &Path) -> Result<CaseBundle> {
    let manifest: Manifest = read_json(manifest_path)?;
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let at = |p: &Path| root.join(p);
    let camera_path = at(&manifest.camera);
    let camera = read_camera(&camera_path)?;
    let dims = (camera.width as usize, camera.height as usize);
    let mesh = read_labelled_mesh(&at(&manifest.mesh), &at(&manifest.landmarks3d))?;

    let image_path = at(&manifest.image);
    let image = read_rgb_png(&image_path)?;
    if (image.width(), image.height()) != dims {
        return Err(mismatch(&image_path, "image", (image.width(), image.height()), &camera));
    }
    let map_path = at(&manifest.landmarks2d);
    let landmarks2d = read_landmark_map(&map_path, DEFAULT_POLYLINE_DILATION)?;
    if (landmarks2d.width(), landmarks2d.height()) != dims {
        return Err(mismatch(&map_path, "label map", (landmarks2d.width(), landmarks2d.height()), &camera));
    }
    let pose = manifest.pose.as_deref().map(|p| read_pose(&at(p))).transpose()?;
    let mask = match manifest.mask.as_deref() {
        Some(p) => {
            let path = at(p);
            let m = read_mask_png(&path)?;
            if (m.width(), m.height()) != dims {
                return Err(mismatch(&path, "mask", (m.width(), m.height()), &camera));
            }
            Some(m)
        }
        None => None,
    };
    Ok(CaseBundle {
        id: manifest.id.clone(),
        root,
        manifest,
        mesh,
        image,
        landmarks2d,
        camera,
        pose,
        mask,
    })
}
