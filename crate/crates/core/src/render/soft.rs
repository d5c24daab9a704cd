//! Signed-distance soft silhouettes and their pose gradient.

use nalgebra::{Vector2, Vector3, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Point2, RigidPose};
use crate::meshproc::LabelledMesh;
use crate::render::raster::{pixel_span, rasterize, DepthBuffer, MeshTopology, ProjectedMesh, BAND_ROWS};
use crate::render::SoftMask;

/// Half-width of the soft boundary band, in multiples of the softness. Past it the
/// sigmoid is within 1e-5 of saturation and the mask is taken as hard.
pub const DEFAULT_BAND_SIGMAS: f64 = 12.0;

const NO_EDGE: u32 = u32::MAX;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Closest point parameter on segment `a→b` and the offset `q − closest`.
#[inline]
pub(crate) fn segment_offset(q: Point2, a: Point2, b: Point2) -> (f64, Vector2<f64>) {
    let e = b - a;
    let len2 = e.norm_squared();
    let t = if len2 > 0.0 {
        ((q - a).dot(&e) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (t, q - (a + e * t))
}

/// Renders one mesh repeatedly under changing poses at a fixed resolution.
#[derive(Debug, Clone)]
pub struct SilhouetteRenderer<'m> {
    mesh: &'m LabelledMesh,
    topology: MeshTopology,
    intr: CameraIntrinsics,
    sigma: f64,
    band: f64,
}

/// One soft render plus what is needed to back-propagate through it.
#[derive(Debug, Clone)]
pub struct SilhouetteRaster {
    pub mask: SoftMask,
    pub covered: Vec<bool>,
    pub depth: DepthBuffer,
    pub proj: ProjectedMesh,
    contour: Vec<[usize; 2]>,
    nearest: Vec<u32>,
}

impl SilhouetteRaster {
    pub fn coverage_count(&self) -> usize {
        self.covered.iter().filter(|&&c| c).count()
    }
}

impl<'m> SilhouetteRenderer<'m> {
    /// `intr` is the full-resolution camera; rendering happens at `scale` of it.
    pub fn new(mesh: &'m LabelledMesh, intr: &CameraIntrinsics, scale: f64, sigma: f64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::InvalidArgument(format!("render scale must be in (0, 1], got {scale}")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("softness must be finite and non-negative, got {sigma}")));
        }
        let intr = intr.scaled(scale);
        intr.validate()?;
        Ok(Self {
            mesh,
            topology: MeshTopology::new(mesh),
            intr,
            sigma,
            band: DEFAULT_BAND_SIGMAS,
        })
    }

    /// Sets the soft band half-width in multiples of the softness.
    pub fn with_band(mut self, sigmas: f64) -> Self {
        self.band = sigmas.max(1.0);
        self
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intr
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mesh(&self) -> &'m LabelledMesh {
        self.mesh
    }

    pub fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    pub fn render(&self, pose: &RigidPose, with_gradients: bool) -> Result<SilhouetteRaster> {
        let (w, h) = (self.intr.width as usize, self.intr.height as usize);
        let proj = ProjectedMesh::new(self.mesh, pose, &self.intr, with_gradients);
        let depth = rasterize(self.mesh, &proj, w, h);
        let covered: Vec<bool> = depth.depth.iter().map(|d| d.is_finite()).collect();
        if !covered.iter().any(|&c| c) {
            return Err(Error::EmptyProjection);
        }
        if self.sigma == 0.0 {
            let mask = SoftMask::from_values(w, h, covered.iter().map(|&c| f64::from(u8::from(c))).collect());
            return Ok(SilhouetteRaster {
                mask,
                covered,
                depth,
                proj,
                contour: Vec::new(),
                nearest: vec![NO_EDGE; w * h],
            });
        }
        let contour: Vec<[usize; 2]> = self
            .topology
            .contour_edges(self.mesh, &proj)
            .into_iter()
            .map(|e| self.topology.edges[e])
            .collect();
        let reach = self.band * self.sigma;
        let (dist, nearest) = nearest_segments(&proj, &contour, w, h, reach);
        let values = (0..w * h)
            .map(|i| {
                if nearest[i] == NO_EDGE {
                    f64::from(u8::from(covered[i]))
                } else {
                    let s = if covered[i] { 1.0 } else { -1.0 };
                    sigmoid(s * dist[i] / self.sigma)
                }
            })
            .collect();
        Ok(SilhouetteRaster {
            mask: SoftMask::from_values(w, h, values),
            covered,
            depth,
            proj,
            contour,
            nearest,
        })
    }

    /// Chain rule from per-pixel `dL/dvalue` to the 6-vector chart gradient
    /// `(dL/dω, dL/dv)` of [`RigidPose::perturbed`] about `pivot`.
    ///
    /// Returns `None` when the raster was made without gradients, in hard mode, or when a
    /// contributing pixel sits exactly on a contour edge.
    pub fn backprop(&self, raster: &SilhouetteRaster, grad_values: &[f64], pivot: &Vector3<f64>) -> Option<Vector6<f64>> {
        if self.sigma == 0.0 || raster.proj.jacobians.is_empty() {
            return None;
        }
        let w = raster.mask.width();
        let mut per_vertex = vec![Vector2::zeros(); raster.proj.pixels.len()];
        for (i, &g) in grad_values.iter().enumerate() {
            let e = raster.nearest[i];
            if g == 0.0 || e == NO_EDGE {
                continue;
            }
            let [ia, ib] = raster.contour[e as usize];
            let (a, b) = (raster.proj.pixels[ia], raster.proj.pixels[ib]);
            let q = Point2::new((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let (t, off) = segment_offset(q, a, b);
            let d = off.norm();
            if d < 1e-9 || (b - a).norm_squared() < 1e-18 {
                return None;
            }
            let v = raster.mask.values()[i];
            let s = if raster.covered[i] { 1.0 } else { -1.0 };
            // d(value)/d(signed distance) times d(distance)/d(endpoint).
            let k = g * v * (1.0 - v) / self.sigma * s / d;
            per_vertex[ia] -= off * (k * (1.0 - t));
            per_vertex[ib] -= off * (k * t);
        }
        Some(chart_gradient(&raster.proj, &per_vertex, pivot))
    }
}

/// Sums per-vertex pixel gradients into the chart gradient about `pivot`.
pub(crate) fn chart_gradient(proj: &ProjectedMesh, per_vertex: &[Vector2<f64>], pivot: &Vector3<f64>) -> Vector6<f64> {
    let mut rot = Vector3::zeros();
    let mut trans = Vector3::zeros();
    for (vi, g) in per_vertex.iter().enumerate() {
        if g.x == 0.0 && g.y == 0.0 {
            continue;
        }
        let gx = proj.jacobians[vi].transpose() * g;
        rot += (proj.camera[vi] - pivot).cross(&gx);
        trans += gx;
    }
    Vector6::new(rot.x, rot.y, rot.z, trans.x, trans.y, trans.z)
}

/// Distance from each pixel center to the nearest segment within `reach`.
/// Ties keep the lower segment index.
fn nearest_segments(
    proj: &ProjectedMesh,
    segments: &[[usize; 2]],
    w: usize,
    h: usize,
    reach: f64,
) -> (Vec<f64>, Vec<u32>) {
    struct Seg {
        a: Point2,
        b: Point2,
        xs: (usize, usize),
        ys: (usize, usize),
    }
    let segs: Vec<Option<Seg>> = segments
        .iter()
        .map(|&[ia, ib]| {
            let (a, b) = (proj.pixels[ia], proj.pixels[ib]);
            let xs = pixel_span(a.x.min(b.x) - reach, a.x.max(b.x) + reach, w)?;
            let ys = pixel_span(a.y.min(b.y) - reach, a.y.max(b.y) + reach, h)?;
            Some(Seg { a, b, xs, ys })
        })
        .collect();
    let reach2 = reach * reach;
    let mut d2 = vec![f64::INFINITY; w * h];
    let mut nearest = vec![NO_EDGE; w * h];
    d2.par_chunks_mut(BAND_ROWS * w)
        .zip(nearest.par_chunks_mut(BAND_ROWS * w))
        .enumerate()
        .for_each(|(band, (d2, nearest))| {
            let row0 = band * BAND_ROWS;
            let row1 = row0 + d2.len() / w - 1;
            for (si, seg) in segs.iter().enumerate() {
                let Some(seg) = seg else { continue };
                let y0 = seg.ys.0.max(row0);
                let y1 = seg.ys.1.min(row1);
                if y0 > y1 {
                    continue;
                }
                for y in y0..=y1 {
                    for x in seg.xs.0..=seg.xs.1 {
                        let q = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
                        let dd = segment_offset(q, seg.a, seg.b).1.norm_squared();
                        let k = (y - row0) * w + x;
                        if dd <= reach2 && dd < d2[k] {
                            d2[k] = dd;
                            nearest[k] = si as u32;
                        }
                    }
                }
            }
        });
    let dist = d2.into_iter().map(f64::sqrt).collect();
    (dist, nearest)
}
