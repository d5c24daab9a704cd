//! Mesh projection, depth-buffer rasterization and projected contour edges.

use nalgebra::{Matrix2x3, Vector2, Vector3};
use rayon::prelude::*;

use crate::geometry::{CameraIntrinsics, Point2, RigidPose};
use crate::meshproc::LabelledMesh;

/// Vertices closer than this (mm) are treated as clipped.
pub const NEAR_PLANE_MM: f64 = 1.0;

/// Relative depth slack of the visibility test.
pub const VISIBILITY_SLACK: f64 = 5e-3;

/// Per-vertex projection of a mesh under one pose.
#[derive(Debug, Clone)]
pub struct ProjectedMesh {
    pub pixels: Vec<Point2>,
    pub camera: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
    /// `d(pixel)/d(camera point)`, present when requested.
    pub jacobians: Vec<Matrix2x3<f64>>,
}

impl ProjectedMesh {
    pub fn new(mesh: &LabelledMesh, pose: &RigidPose, intr: &CameraIntrinsics, with_jacobians: bool) -> Self {
        let n = mesh.vertices.len();
        let mut pixels = Vec::with_capacity(n);
        let mut camera = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        let mut jacobians = Vec::with_capacity(if with_jacobians { n } else { 0 });
        for p in &mesh.vertices {
            let x = pose.apply(p).coords;
            camera.push(x);
            let ok = x.z > NEAR_PLANE_MM;
            valid.push(ok);
            if ok {
                if with_jacobians {
                    let (u, j) = intr
                        .project_camera_point_with_jacobian(&x)
                        .expect("depth checked");
                    pixels.push(u);
                    jacobians.push(j);
                } else {
                    pixels.push(intr.project_camera_point(&x).expect("depth checked"));
                }
            } else {
                pixels.push(Point2::new(f64::NAN, f64::NAN));
                if with_jacobians {
                    jacobians.push(Matrix2x3::zeros());
                }
            }
        }
        Self {
            pixels,
            camera,
            valid,
            jacobians,
        }
    }

    pub fn face_valid(&self, f: &[usize; 3]) -> bool {
        self.valid[f[0]] && self.valid[f[1]] && self.valid[f[2]]
    }

    /// Twice the signed screen-space area of a face.
    pub fn face_area2(&self, f: &[usize; 3]) -> f64 {
        let a = self.pixels[f[0]];
        let b = self.pixels[f[1]];
        let c = self.pixels[f[2]];
        cross2(b - a, c - a)
    }
}

#[inline]
pub fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Nearest-surface depth per pixel (`INFINITY` where empty).
#[derive(Debug, Clone)]
pub struct DepthBuffer {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
}

impl DepthBuffer {
    pub fn covered(&self, x: usize, y: usize) -> bool {
        self.depth[y * self.width + x].is_finite()
    }

    pub fn coverage_count(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }

    /// Whether projected vertex `i` is in the image and not behind the surface: it must be
    /// no deeper than the farthest sample in its 3×3 pixel neighbourhood, plus a small
    /// relative slack.
    pub fn vertex_visible(&self, proj: &ProjectedMesh, i: usize) -> bool {
        if !proj.valid[i] {
            return false;
        }
        let u = proj.pixels[i];
        if !(u.x >= 0.0 && u.y >= 0.0 && u.x < self.width as f64 && u.y < self.height as f64) {
            return false;
        }
        let front = self.neighbourhood_max(u.x as usize, u.y as usize);
        !front.is_finite() || proj.camera[i].z <= front * (1.0 + VISIBILITY_SLACK)
    }

    /// Largest finite depth among the 3×3 neighbourhood of a pixel.
    pub fn neighbourhood_max(&self, x: usize, y: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for yy in y.saturating_sub(1)..=(y + 1).min(self.height - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(self.width - 1) {
                let d = self.depth[yy * self.width + xx];
                if d.is_finite() && d > best {
                    best = d;
                }
            }
        }
        best
    }
}

/// Rows per parallel rasterization band.
pub(crate) const BAND_ROWS: usize = 16;

/// Rasterizes every face whose vertices are in front of the near plane. A pixel is
/// covered when its center lies inside (or on the edge of) a projected triangle;
/// depth uses perspective-correct interpolation and the nearest surface wins.
pub fn rasterize(mesh: &LabelledMesh, proj: &ProjectedMesh, width: usize, height: usize) -> DepthBuffer {
    struct Tri {
        p: [Point2; 3],
        inv_z: [f64; 3],
        inv_area: f64,
        xs: (usize, usize),
        ys: (usize, usize),
    }
    let tris: Vec<Tri> = mesh
        .faces
        .iter()
        .filter_map(|f| {
            if !proj.face_valid(f) {
                return None;
            }
            let area2 = proj.face_area2(f);
            if area2 == 0.0 || !area2.is_finite() {
                return None;
            }
            let p = [proj.pixels[f[0]], proj.pixels[f[1]], proj.pixels[f[2]]];
            let xs = pixel_span(p[0].x.min(p[1].x).min(p[2].x), p[0].x.max(p[1].x).max(p[2].x), width)?;
            let ys = pixel_span(p[0].y.min(p[1].y).min(p[2].y), p[0].y.max(p[1].y).max(p[2].y), height)?;
            Some(Tri {
                p,
                inv_z: [
                    1.0 / proj.camera[f[0]].z,
                    1.0 / proj.camera[f[1]].z,
                    1.0 / proj.camera[f[2]].z,
                ],
                inv_area: 1.0 / area2,
                xs,
                ys,
            })
        })
        .collect();
    let mut depth = vec![f64::INFINITY; width * height];
    if width > 0 {
        depth
            .par_chunks_mut(BAND_ROWS * width)
            .enumerate()
            .for_each(|(band, rows)| {
                let row0 = band * BAND_ROWS;
                let row1 = row0 + rows.len() / width - 1;
                for t in &tris {
                    let y0 = t.ys.0.max(row0);
                    let y1 = t.ys.1.min(row1);
                    if y0 > y1 {
                        continue;
                    }
                    let [a, b, c] = t.p;
                    for y in y0..=y1 {
                        let py = y as f64 + 0.5;
                        for x in t.xs.0..=t.xs.1 {
                            let q = Point2::new(x as f64 + 0.5, py);
                            let w0 = cross2(c - b, q - b) * t.inv_area;
                            let w1 = cross2(a - c, q - c) * t.inv_area;
                            let w2 = cross2(b - a, q - a) * t.inv_area;
                            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                                continue;
                            }
                            let z = 1.0 / (w0 * t.inv_z[0] + w1 * t.inv_z[1] + w2 * t.inv_z[2]);
                            let slot = &mut rows[(y - row0) * width + x];
                            if z < *slot {
                                *slot = z;
                            }
                        }
                    }
                }
            });
    }
    DepthBuffer {
        width,
        height,
        depth,
    }
}

/// Pixel index range whose centers may fall within `[lo, hi]`.
pub(crate) fn pixel_span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    if !(lo.is_finite() && hi.is_finite()) {
        return None;
    }
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    if first > last {
        return None;
    }
    Some((first as usize, last as usize))
}

/// Edge/face adjacency of a mesh, computed once and reused across poses.
#[derive(Debug, Clone)]
pub struct MeshTopology {
    pub edges: Vec<[usize; 2]>,
    pub edge_faces: Vec<Vec<u32>>,
}

impl MeshTopology {
    pub fn new(mesh: &LabelledMesh) -> Self {
        let mut keyed: Vec<((usize, usize), u32)> = mesh
            .faces
            .iter()
            .enumerate()
            .flat_map(|(fi, f)| {
                [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
                    .into_iter()
                    .map(move |(a, b)| ((a.min(b), a.max(b)), fi as u32))
            })
            .collect();
        keyed.sort_unstable();
        let mut edges = Vec::new();
        let mut edge_faces: Vec<Vec<u32>> = Vec::new();
        for (key, face) in keyed {
            if edges.last() != Some(&[key.0, key.1]) {
                edges.push([key.0, key.1]);
                edge_faces.push(Vec::with_capacity(2));
            }
            edge_faces.last_mut().unwrap().push(face);
        }
        Self { edges, edge_faces }
    }

    /// Edges on the projected occluding contour: open boundary edges and edges whose
    /// adjacent faces project with opposite orientation.
    pub fn contour_edges(&self, mesh: &LabelledMesh, proj: &ProjectedMesh) -> Vec<usize> {
        let orient: Vec<i8> = mesh
            .faces
            .iter()
            .map(|f| {
                if !proj.face_valid(f) {
                    return 0;
                }
                let a = proj.face_area2(f);
                if a > 0.0 {
                    1
                } else if a < 0.0 {
                    -1
                } else {
                    0
                }
            })
            .collect();
        let mut out = Vec::new();
        for (ei, faces) in self.edge_faces.iter().enumerate() {
            let mut pos = 0;
            let mut neg = 0;
            for &f in faces {
                match orient[f as usize] {
                    1 => pos += 1,
                    -1 => neg += 1,
                    _ => {}
                }
            }
            let live = pos + neg;
            if live == 0 {
                continue;
            }
            if live == 1 || (pos > 0 && neg > 0) {
                out.push(ei);
            }
        }
        out
    }
}
