//! Registration overlays: silhouette boundary and landmark points over the frame.

use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::pixels::PixelMask;
use crate::render::{render_landmarks, render_silhouette, Channel};
use crate::tooling::{CaseBundle, RgbImage};

pub const RIDGE_COLOR: [u8; 3] = [255, 0, 0];
pub const LIGAMENT_COLOR: [u8; 3] = [0, 0, 255];
pub const SILHOUETTE_COLOR: [u8; 3] = [255, 255, 0];

/// Landmark point radius in overlays (pixels), matching synthetic case rendering.
const POINT_RADIUS: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct Overlay {
    pub image: RgbImage,
    /// Set when nothing could be drawn and the frame is returned unchanged.
    pub warning: Option<String>,
}

/// Object pixels with a 4-neighbour outside the object or on the image border.
fn boundary(inside: &PixelMask) -> PixelMask {
    let (w, h) = (inside.width(), inside.height());
    PixelMask::from_fn(w, h, |x, y| {
        inside.get(x, y)
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !inside.get(x - 1, y)
                || !inside.get(x + 1, y)
                || !inside.get(x, y - 1)
                || !inside.get(x, y + 1))
    })
}

fn paint(image: &mut RgbImage, mask: &PixelMask, color: [u8; 3]) {
    for (x, y) in mask.pixels() {
        image.set(x, y, color);
    }
}

/// Draws the mesh silhouette boundary (yellow), then ligament (blue) and ridge (red)
/// landmark points projected under `pose`.
pub fn render_overlay(bundle: &CaseBundle, pose: &RigidPose) -> Result<Overlay> {
    let mut image = bundle.image.clone();
    let unchanged = |image: RgbImage| Overlay {
        image,
        warning: Some(format!("case {}: model projects outside the image, overlay left blank", bundle.id)),
    };
    let inside = match render_silhouette(&bundle.mesh, pose, &bundle.camera, 1.0, 0.0) {
        Ok(mask) => mask.threshold(0.5),
        Err(Error::EmptyProjection) => return Ok(unchanged(image)),
        Err(e) => return Err(e),
    };
    if !inside.any() {
        return Ok(unchanged(image));
    }
    paint(&mut image, &boundary(&inside), SILHOUETTE_COLOR);
    match render_landmarks(&bundle.mesh, &bundle.mesh.labels, pose, &bundle.camera, POINT_RADIUS) {
        Ok(points) => {
            paint(&mut image, &points.channel(Channel::Ligament), LIGAMENT_COLOR);
            paint(&mut image, &points.channel(Channel::Ridge), RIDGE_COLOR);
        }
        Err(Error::EmptyProjection) => {}
        Err(e) => return Err(e),
    }
    Ok(Overlay { image, warning: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::meshproc::shapes::{liver_blob, BlobParams};
    use crate::pixels::distance_transform;
    use crate::tooling::{synth_case, PoseSource};
    use nalgebra::Vector3;

    fn case(dir: &std::path::Path) -> crate::tooling::SyntheticCase {
        let mesh = liver_blob(&BlobParams {
            subdivisions: 2,
            ..Default::default()
        });
        let intr = CameraIntrinsics::pinhole(500.0, 500.0, 160.0, 120.0, 320, 240);
        synth_case(&mesh, &intr, PoseSource::Seed(11), dir, "o").unwrap()
    }

    fn colored(image: &RgbImage, color: [u8; 3]) -> PixelMask {
        PixelMask::from_fn(image.width(), image.height(), |x, y| image.get(x, y) == color)
    }

    #[test]
    fn curves_at_the_true_pose_land_on_the_bundled_landmarks() {
        let dir = tempfile::tempdir().unwrap();
        let c = case(dir.path());
        let out = render_overlay(&c.bundle, &c.gt_pose).unwrap();
        assert!(out.warning.is_none());
        for (color, channel) in [(RIDGE_COLOR, Channel::Ridge), (LIGAMENT_COLOR, Channel::Ligament)] {
            let drawn = colored(&out.image, color);
            assert!(drawn.any());
            let df = distance_transform(&c.bundle.landmarks2d.channel(channel));
            assert!(drawn.pixels().iter().all(|&(x, y)| df.dist(x, y) <= 1.0));
        }
        let sil = colored(&out.image, SILHOUETTE_COLOR);
        let df = distance_transform(&sil);
        // The bundled upper contour lies on the drawn boundary.
        let upper = c.bundle.landmarks2d.channel(Channel::Silhouette);
        assert!(upper.any());
        assert!(upper.pixels().iter().all(|&(x, y)| df.dist(x, y) <= 1.0));
    }

    #[test]
    fn out_of_frame_pose_leaves_the_image_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let c = case(dir.path());
        let away = RigidPose::from_translation(Vector3::new(0.0, 0.0, -300.0));
        let out = render_overlay(&c.bundle, &away).unwrap();
        assert_eq!(out.image, c.bundle.image);
        assert!(out.warning.is_some());
    }

    #[test]
    fn palette_follows_the_annotation_convention() {
        assert_eq!(SILHOUETTE_COLOR, [255, 255, 0]);
        assert_eq!(RIDGE_COLOR, [255, 0, 0]);
        assert_eq!(LIGAMENT_COLOR, [0, 0, 255]);
    }
}
