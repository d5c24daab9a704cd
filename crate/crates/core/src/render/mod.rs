//! Software rasterization of labelled meshes into silhouettes and landmark maps.

mod fft;
pub(crate) mod png_io;
pub mod raster;
mod soft;

use std::collections::BTreeSet;

pub use fft::{contour_enhance, DEFAULT_CUTOFF_BINS};
pub use png_io::{read_label_png, read_mask_png, write_label_png, write_mask_png};
pub use raster::{DepthBuffer, MeshTopology, ProjectedMesh, NEAR_PLANE_MM};
pub use soft::{SilhouetteRaster, SilhouetteRenderer, DEFAULT_BAND_SIGMAS};
pub(crate) use soft::{chart_gradient, sigmoid};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidPose};
use crate::meshproc::{LabelledMesh, LandmarkClass, LandmarkSet3D};
use crate::pixels::PixelMask;

/// Fraction of the image resolution used while optimizing.
pub const DEFAULT_RENDER_SCALE: f64 = 0.2;

/// Per-pixel occupancy in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SoftMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    /// Values are clamped into `[0, 1]`.
    pub fn from_values(width: usize, height: usize, mut values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height, "mask size does not match its domain");
        for v in &mut values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn from_pixel_mask(mask: &PixelMask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            values: mask.data().iter().map(|&b| f64::from(u8::from(b))).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn threshold(&self, level: f64) -> PixelMask {
        PixelMask::from_fn(self.width, self.height, |x, y| self.get(x, y) >= level)
    }

    /// Nearest-neighbour resampling to another resolution.
    pub fn resized(&self, width: usize, height: usize) -> SoftMask {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                values.push(self.get(sx.min(self.width - 1), sy.min(self.height - 1)));
            }
        }
        SoftMask {
            width,
            height,
            values,
        }
    }
}

/// Real-valued single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "image size does not match its domain");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Label channels of a [`LandmarkMap2D`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Ridge,
    Ligament,
    Silhouette,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Ridge, Channel::Ligament, Channel::Silhouette];

    pub fn bit(self) -> u8 {
        match self {
            Channel::Ridge => 1,
            Channel::Ligament => 2,
            Channel::Silhouette => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Ridge => "ridge",
            Channel::Ligament => "ligament",
            Channel::Silhouette => "silhouette",
        }
    }
}

impl From<LandmarkClass> for Channel {
    fn from(c: LandmarkClass) -> Self {
        match c {
            LandmarkClass::Ridge => Channel::Ridge,
            LandmarkClass::Ligament => Channel::Ligament,
        }
    }
}

/// Per-pixel class bitmask over ridge, ligament and silhouette.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LandmarkMap2D {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl LandmarkMap2D {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn for_camera(intr: &CameraIntrinsics) -> Self {
        Self::new(intr.width as usize, intr.height as usize)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn has(&self, x: usize, y: usize, c: Channel) -> bool {
        self.get(x, y) & c.bit() != 0
    }

    #[inline]
    pub fn insert(&mut self, x: usize, y: usize, c: Channel) {
        self.bits[y * self.width + x] |= c.bit();
    }

    pub fn set_bits(&mut self, x: usize, y: usize, bits: u8) {
        self.bits[y * self.width + x] = bits & 0b111;
    }

    pub fn channel(&self, c: Channel) -> PixelMask {
        PixelMask::from_fn(self.width, self.height, |x, y| self.has(x, y, c))
    }

    /// Ors a pixel set into one channel.
    pub fn paint(&mut self, c: Channel, mask: &PixelMask) {
        assert!(mask.width() == self.width && mask.height() == self.height, "domain mismatch");
        for (b, &m) in self.bits.iter_mut().zip(mask.data()) {
            if m {
                *b |= c.bit();
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Union of all channels.
    pub fn any_channel(&self) -> PixelMask {
        PixelMask::from_fn(self.width, self.height, |x, y| self.get(x, y) != 0)
    }

    pub fn matches_camera(&self, intr: &CameraIntrinsics) -> bool {
        self.width == intr.width as usize && self.height == intr.height as usize
    }
}

/// Renders the occupancy silhouette at `scale` of the camera resolution.
///
/// `softness` is the sigmoid width in render-resolution pixels; zero gives a binary mask.
pub fn render_silhouette(
    mesh: &LabelledMesh,
    pose: &RigidPose,
    intr: &CameraIntrinsics,
    scale: f64,
    softness: f64,
) -> Result<SoftMask> {
    let renderer = SilhouetteRenderer::new(mesh, intr, scale, softness)?;
    Ok(renderer.render(pose, false)?.mask)
}

/// Vertices in front of the camera, inside the image and not hidden by any face.
///
/// Occlusion is tested against the depth buffer at the camera's resolution, so the
/// result depends on the resolution the caller picks.
pub fn visible_vertices(mesh: &LabelledMesh, pose: &RigidPose, intr: &CameraIntrinsics) -> BTreeSet<usize> {
    let proj = ProjectedMesh::new(mesh, pose, intr, false);
    let depth = raster::rasterize(mesh, &proj, intr.width as usize, intr.height as usize);
    (0..mesh.vertices.len()).filter(|&i| depth.vertex_visible(&proj, i)).collect()
}

/// Splats each visible landmark vertex as a disc of `point_radius` pixels into its class
/// channel. A pixel belongs to the disc when its center is within the radius.
pub fn render_landmarks(
    mesh: &LabelledMesh,
    landmarks: &LandmarkSet3D,
    pose: &RigidPose,
    intr: &CameraIntrinsics,
    point_radius: f64,
) -> Result<LandmarkMap2D> {
    landmarks.validate(mesh.vertices.len())?;
    if !(point_radius >= 0.0) {
        return Err(Error::InvalidArgument(format!("point radius must be non-negative, got {point_radius}")));
    }
    let visible = visible_vertices(mesh, pose, intr);
    let mut map = LandmarkMap2D::for_camera(intr);
    let mut drawn = false;
    for class in LandmarkClass::ALL {
        for &v in landmarks.class(class) {
            if !visible.contains(&v) {
                continue;
            }
            let Ok(u) = intr.project_camera_point(&pose.apply(&mesh.vertices[v]).coords) else {
                continue;
            };
            drawn |= splat_disc(&mut map, u.x, u.y, point_radius, class.into());
        }
    }
    if drawn {
        Ok(map)
    } else {
        Err(Error::EmptyProjection)
    }
}

/// Marks pixels whose centers lie within `radius` of `(cx, cy)`; returns whether any did.
pub(crate) fn splat_disc(map: &mut LandmarkMap2D, cx: f64, cy: f64, radius: f64, c: Channel) -> bool {
    let Some((x0, x1)) = raster::pixel_span(cx - radius, cx + radius, map.width) else { return false };
    let Some((y0, y1)) = raster::pixel_span(cy - radius, cy + radius, map.height) else { return false };
    let r2 = radius * radius;
    let mut any = false;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r2 {
                map.insert(x, y, c);
                any = true;
            }
        }
    }
    any
}

/// Upper occluding boundary of a mask: pixels where a column scanned top to bottom
/// goes from background into the object, dilated by `dilation` pixels.
///
/// The mask is thresholded at 0.5. An object pixel on the top image row counts as a
/// transition only if the row above it would be background, which the image border
/// cannot tell, so it is left unmarked.
pub fn extract_view_silhouette(mask: &SoftMask, dilation: f64) -> LandmarkMap2D {
    let inside = mask.threshold(0.5);
    let (w, h) = (mask.width, mask.height);
    let edge = PixelMask::from_fn(w, h, |x, y| y > 0 && inside.get(x, y) && !inside.get(x, y - 1));
    let mut out = LandmarkMap2D::new(w, h);
    out.paint(Channel::Silhouette, &edge.dilated(dilation));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use nalgebra::{Matrix3, Vector3};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(100.0, 100.0, 32.0, 24.0, 64, 48)
    }

    fn triangle(z: f64, size: f64) -> Vec<Point3> {
        vec![
            Point3::new(-size, -size, z),
            Point3::new(size, -0.6 * size, z),
            Point3::new(0.2 * size, size, z),
        ]
    }

    /// Point-in-triangle by solving for barycentric coordinates.
    fn inside(q: [f64; 2], t: &[[f64; 2]; 3]) -> Option<bool> {
        let m = Matrix3::new(t[0][0], t[1][0], t[2][0], t[0][1], t[1][1], t[2][1], 1.0, 1.0, 1.0);
        let l = m.lu().solve(&Vector3::new(q[0], q[1], 1.0))?;
        let min = l.min();
        if min.abs() < 1e-9 {
            return None;
        }
        Some(min > 0.0)
    }

    #[test]
    fn hard_triangle_matches_point_in_triangle() {
        let c = cam();
        let mesh = LabelledMesh::new(triangle(100.0, 12.0), vec![[0, 1, 2]]).unwrap();
        let pose = RigidPose::identity();
        let m = render_silhouette(&mesh, &pose, &c, 1.0, 0.0).unwrap();
        let t: Vec<[f64; 2]> = mesh
            .vertices
            .iter()
            .map(|p| {
                let u = crate::geometry::project(&c, &pose, p).unwrap();
                [u.x, u.y]
            })
            .collect();
        let t = [t[0], t[1], t[2]];
        let mut checked = 0;
        for y in 0..48 {
            for x in 0..64 {
                if let Some(expect) = inside([x as f64 + 0.5, y as f64 + 0.5], &t) {
                    assert_eq!(m.get(x, y) == 1.0, expect, "pixel ({x}, {y})");
                    checked += 1;
                }
            }
        }
        assert!(checked > 3000);
    }

    #[test]
    fn mesh_behind_camera_projects_nothing() {
        let mesh = LabelledMesh::new(triangle(-100.0, 12.0), vec![[0, 1, 2]]).unwrap();
        let r = render_silhouette(&mesh, &RigidPose::identity(), &cam(), 1.0, 0.0);
        assert!(matches!(r, Err(Error::EmptyProjection)));
    }

    #[test]
    fn vanishing_softness_approaches_hard_mask() {
        let mut mesh = crate::meshproc::shapes::icosphere(2);
        for p in &mut mesh.vertices {
            p.coords *= 25.0;
        }
        let pose = RigidPose::from_translation(Vector3::new(3.0, -2.0, 200.0));
        let hard = render_silhouette(&mesh, &pose, &cam(), 1.0, 0.0).unwrap();
        let soft = render_silhouette(&mesh, &pose, &cam(), 1.0, 1e-3).unwrap();
        let boundary = hard.threshold(0.5);
        // Pixels with a differently labelled 8-neighbour.
        let ring = PixelMask::from_fn(64, 48, |x, y| {
            let v = boundary.get(x, y);
            (y.saturating_sub(1)..=(y + 1).min(47))
                .any(|yy| (x.saturating_sub(1)..=(x + 1).min(63)).any(|xx| boundary.get(xx, yy) != v))
        });
        for y in 0..48 {
            for x in 0..64 {
                if !ring.get(x, y) {
                    assert!((soft.get(x, y) - hard.get(x, y)).abs() < 1e-6, "({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn scale_changes_resolution() {
        let mesh = LabelledMesh::new(triangle(100.0, 12.0), vec![[0, 1, 2]]).unwrap();
        let m = render_silhouette(&mesh, &RigidPose::identity(), &cam(), 0.5, 0.0).unwrap();
        assert_eq!((m.width(), m.height()), (32, 24));
        assert!(render_silhouette(&mesh, &RigidPose::identity(), &cam(), 0.0, 0.0).is_err());
    }

    #[test]
    fn single_triangle_vertices_are_all_visible() {
        let mesh = LabelledMesh::new(triangle(100.0, 8.0), vec![[0, 1, 2]]).unwrap();
        let v = visible_vertices(&mesh, &RigidPose::identity(), &cam());
        assert_eq!(v, BTreeSet::from([0, 1, 2]));
    }

    #[test]
    fn rear_triangle_interior_is_hidden() {
        let mut v = triangle(100.0, 12.0);
        // A small triangle behind the big one, plus a vertex behind the camera.
        v.extend(triangle(200.0, 6.0));
        v.push(Point3::new(0.0, 0.0, -5.0));
        let mesh = LabelledMesh::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        let vis = visible_vertices(&mesh, &RigidPose::identity(), &cam());
        assert_eq!(vis, BTreeSet::from([0, 1, 2]));
    }

    #[test]
    fn single_landmark_draws_a_disc_at_the_principal_point() {
        let mut v = triangle(100.0, 12.0);
        v.push(Point3::new(0.0, 0.0, 90.0));
        let mesh = LabelledMesh::new(v, vec![[0, 1, 2]]).unwrap();
        let lm = LandmarkSet3D::new([3], []);
        let map = render_landmarks(&mesh, &lm, &RigidPose::identity(), &cam(), 2.0).unwrap();
        let ridge = map.channel(Channel::Ridge);
        let expect = PixelMask::from_fn(64, 48, |x, y| {
            (x as f64 + 0.5 - 32.0).powi(2) + (y as f64 + 0.5 - 24.0).powi(2) <= 4.0
        });
        assert_eq!(ridge, expect);
        assert!(!map.channel(Channel::Ligament).any());
    }

    #[test]
    fn occluded_or_missing_landmarks_are_not_drawn() {
        let mut v = triangle(100.0, 12.0);
        v.push(Point3::new(0.0, 0.0, 150.0));
        let mesh = LabelledMesh::new(v, vec![[0, 1, 2]]).unwrap();
        let hidden = LandmarkSet3D::new([], [3]);
        assert!(matches!(
            render_landmarks(&mesh, &hidden, &RigidPose::identity(), &cam(), 2.0),
            Err(Error::EmptyProjection)
        ));
        assert!(matches!(
            render_landmarks(&mesh, &LandmarkSet3D::default(), &RigidPose::identity(), &cam(), 2.0),
            Err(Error::EmptyProjection)
        ));
    }

    #[test]
    fn rectangle_silhouette_is_its_top_row() {
        let m = PixelMask::from_fn(20, 16, |x, y| (4..12).contains(&x) && (5..10).contains(&y));
        let s = extract_view_silhouette(&SoftMask::from_pixel_mask(&m), 0.0).channel(Channel::Silhouette);
        assert_eq!(s, PixelMask::from_fn(20, 16, |x, y| (4..12).contains(&x) && y == 5));
    }

    #[test]
    fn circle_silhouette_is_the_first_transition_per_column() {
        let m = PixelMask::from_fn(40, 40, |x, y| (x as f64 - 20.0).powi(2) + (y as f64 - 20.0).powi(2) <= 100.0);
        let s = extract_view_silhouette(&SoftMask::from_pixel_mask(&m), 0.0).channel(Channel::Silhouette);
        for x in 0..40 {
            let first = (0..40).find(|&y| m.get(x, y));
            for y in 0..40 {
                assert_eq!(s.get(x, y), Some(y) == first, "({x}, {y})");
            }
        }
    }

    #[test]
    fn empty_mask_gives_empty_silhouette() {
        assert!(extract_view_silhouette(&SoftMask::new(8, 8), 3.0).is_empty());
    }

    #[test]
    fn dilated_silhouette_stays_near_the_boundary() {
        let m = PixelMask::from_fn(40, 40, |x, y| (x as f64 - 20.0).powi(2) + (y as f64 - 20.0).powi(2) <= 100.0);
        let s = extract_view_silhouette(&SoftMask::from_pixel_mask(&m), 2.0).channel(Channel::Silhouette);
        let boundary = PixelMask::from_fn(40, 40, |x, y| m.get(x, y) && y > 0 && !m.get(x, y - 1));
        assert_eq!(s.and_not(&boundary.dilated(2.0)).count(), 0);
    }
}
