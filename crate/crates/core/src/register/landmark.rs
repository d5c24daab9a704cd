//! Landmark-map render-and-compare registration.
//!
//! Ridge and ligament vertices are splatted as soft discs, the upper silhouette is the
//! positive vertical difference of the soft occupancy mask, and each channel is compared
//! with the downsampled target after blurring at several widths.

use nalgebra::{Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{Point2, RigidPose};
use crate::meshproc::LandmarkClass;
use crate::register::blur::{blur, box_radius, support};
use crate::register::silhouette::area_downsample;
use crate::register::descent::{descend, Evaluation, Objective};
use crate::register::{multi_start, Method, OptimizerConfig, RegistrationProblem, RegistrationResult};
use crate::render::{chart_gradient, sigmoid, Channel, LandmarkMap2D, SilhouetteRaster, SilhouetteRenderer, SoftMask};

/// Splat footprint past the disc edge, in multiples of the disc softness.
const SPLAT_TAIL: f64 = 10.0;

/// Camera-facing cosine over which a landmark splat fades in from nothing.
const FACING_RAMP: f64 = 0.2;

/// A landmark vertex drawn with a facing weight.
struct Splat {
    vertex: usize,
    weight: f64,
    /// Derivative of the weight with respect to the pose chart.
    dweight: Vector6<f64>,
}

/// Downsamples a label channel by area: a low-resolution pixel holds the fraction of its
/// full-resolution pixels that carry the channel.
pub(crate) fn mean_pool(map: &LandmarkMap2D, c: Channel, scale: f64, w: usize, h: usize) -> Vec<f64> {
    area_downsample(&SoftMask::from_pixel_mask(&map.channel(c)), scale, w, h)
}

fn centroid(values: &[f64], w: usize) -> Option<Point2> {
    let mut sum = Vector2::zeros();
    let mut n = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if v > 0.0 {
            sum += Vector2::new((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            n += 1.0;
        }
    }
    (n > 0.0).then(|| Point2::from(sum / n))
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Rect {
    fn empty() -> Self {
        Rect {
            x0: usize::MAX,
            y0: usize::MAX,
            x1: 0,
            y1: 0,
        }
    }

    fn is_empty(&self) -> bool {
        self.x0 > self.x1 || self.y0 > self.y1
    }

    fn include(&mut self, x: usize, y: usize) {
        self.x0 = self.x0.min(x);
        self.y0 = self.y0.min(y);
        self.x1 = self.x1.max(x);
        self.y1 = self.y1.max(y);
    }

    fn grown(&self, m: usize, w: usize, h: usize) -> Rect {
        Rect {
            x0: self.x0.saturating_sub(m),
            y0: self.y0.saturating_sub(m),
            x1: (self.x1 + m).min(w - 1),
            y1: (self.y1 + m).min(h - 1),
        }
    }

    fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

struct TargetChannel {
    channel: Channel,
    weight: f64,
    /// Blurred target per scale over the whole render grid.
    blurred: Vec<Vec<f64>>,
    /// Squared norm of each blurred target.
    energy: Vec<f64>,
    /// Loss multiplier per scale: the class weight over the target energy at that scale.
    factor: Vec<f64>,
    /// Total of the downsampled target.
    mass: f64,
}

pub(crate) struct LandmarkObjective<'p> {
    renderer: SilhouetteRenderer<'p>,
    problem: &'p RegistrationProblem,
    radii: Vec<usize>,
    channels: Vec<TargetChannel>,
    splat_radius: f64,
    splat_softness: f64,
    /// Target ligament centroid at render resolution.
    ligament_centroid: Option<Point2>,
    normals: Vec<Vector3<f64>>,
    tmp: Vec<f64>,
}

impl<'p> LandmarkObjective<'p> {
    pub(crate) fn new(problem: &'p RegistrationProblem, cfg: &OptimizerConfig) -> Result<Self> {
        let renderer = SilhouetteRenderer::new(&problem.mesh, &problem.intr, cfg.render_scale, cfg.softness)?;
        let (w, h) = (renderer.intrinsics().width as usize, renderer.intrinsics().height as usize);
        let radii: Vec<usize> = cfg.landmark.blur_scales.iter().map(|&s| box_radius(s)).collect();
        if radii.is_empty() {
            return Err(Error::InvalidArgument("at least one blur scale is required".into()));
        }
        let weights = [
            (Channel::Ridge, cfg.weights.ridge),
            (Channel::Ligament, cfg.weights.ligament),
            (Channel::Silhouette, cfg.weights.silhouette),
        ];
        let mut tmp = Vec::new();
        let mut channels = Vec::new();
        let ligament_centroid = centroid(&mean_pool(&problem.target2d, Channel::Ligament, cfg.render_scale, w, h), w);
        for (channel, weight) in weights {
            if weight == 0.0 {
                continue;
            }
            let pooled = mean_pool(&problem.target2d, channel, cfg.render_scale, w, h);
            let mass = pooled.iter().sum();
            let mut blurred = Vec::new();
            let mut energy = Vec::new();
            for &r in &radii {
                let mut b = pooled.clone();
                blur(&mut b, w, h, r, &mut tmp);
                energy.push(b.iter().map(|v| v * v).sum());
                blurred.push(b);
            }
            channels.push(TargetChannel {
                channel,
                weight,
                blurred,
                energy,
                factor: Vec::new(),
                mass,
            });
        }
        let n_scales = radii.len() as f64;
        for si in 0..radii.len() {
            let present: Vec<f64> = channels.iter().map(|c| c.energy[si]).filter(|&e| e > 0.0).collect();
            if present.is_empty() {
                return Err(Error::InvalidArgument("target landmark map is empty".into()));
            }
            // A class missing from the target is charged against the mean energy of the others.
            let fallback = present.iter().sum::<f64>() / present.len() as f64;
            for c in &mut channels {
                let e = if c.energy[si] > 0.0 { c.energy[si] } else { fallback };
                c.factor.push(c.weight / (n_scales * e));
            }
        }
        Ok(Self {
            renderer,
            problem,
            radii,
            channels,
            splat_radius: cfg.landmark.splat_radius,
            splat_softness: cfg.landmark.splat_softness,
            ligament_centroid,
            normals: problem.mesh.vertex_normals(),
            tmp,
        })
    }

    fn visible_class(&self, raster: &SilhouetteRaster, class: LandmarkClass) -> Vec<usize> {
        self.problem
            .landmarks3d
            .class(class)
            .iter()
            .copied()
            .filter(|&v| raster.depth.vertex_visible(&raster.proj, v))
            .collect()
    }

    /// Visible vertices of a class whose normals face the camera, weighted by a smoothstep
    /// of the facing cosine so that vertices turning onto the rim fade out continuously.
    fn splats(&self, raster: &SilhouetteRaster, pose: &RigidPose, pivot: &Vector3<f64>, class: LandmarkClass) -> Vec<Splat> {
        let mut out = Vec::new();
        for v in self.visible_class(raster, class) {
            let p = raster.proj.camera[v];
            let n = pose.rotation() * self.normals[v];
            let len = p.norm();
            let q = p / len;
            let np = n.dot(&p);
            let facing = -np / len;
            let t = (facing / FACING_RAMP).clamp(0.0, 1.0);
            if t <= 0.0 {
                continue;
            }
            let weight = t * t * (3.0 - 2.0 * t);
            let dw = if t < 1.0 { 6.0 * t * (1.0 - t) / FACING_RAMP } else { 0.0 };
            let drot = -n.cross(pivot) / len + (p - pivot).cross(&q) * (np / (len * len));
            let dtrans = -n / len + q * (np / (len * len));
            let d = Vector6::new(drot.x, drot.y, drot.z, dtrans.x, dtrans.y, dtrans.z);
            out.push(Splat {
                vertex: v,
                weight,
                dweight: d * dw,
            });
        }
        out
    }

    /// Shifts the pose parallel to the image plane so the rendered and target ligament
    /// centroids coincide.
    pub(crate) fn prealign(&self, mut pose: RigidPose, rounds: usize) -> RigidPose {
        let Some(target) = self.ligament_centroid else {
            return pose;
        };
        let intr = *self.renderer.intrinsics();
        for _ in 0..rounds {
            let Ok(raster) = self.renderer.render(&pose, false) else { break };
            let vis = self.visible_class(&raster, LandmarkClass::Ligament);
            if vis.is_empty() {
                break;
            }
            let n = vis.len() as f64;
            let u: Vector2<f64> = vis.iter().map(|&v| raster.proj.pixels[v].coords).sum::<Vector2<f64>>() / n;
            let z: f64 = vis.iter().map(|&v| raster.proj.camera[v].z).sum::<f64>() / n;
            let d = target.coords - u;
            let t = pose.translation() + Vector3::new(d.x * z / intr.fx, d.y * z / intr.fy, 0.0);
            pose = pose.with_translation(t);
        }
        pose
    }
}

impl Objective for LandmarkObjective<'_> {
    fn evaluate(&mut self, pose: &RigidPose, pivot: &Vector3<f64>, gradient: bool) -> Result<Evaluation> {
        let raster = self.renderer.render(pose, gradient)?;
        let (w, h) = (raster.mask.width(), raster.mask.height());
        let margin = support(*self.radii.iter().max().expect("non-empty"));
        let reach = self.splat_radius + SPLAT_TAIL * self.splat_softness;

        let ridge = self.splats(&raster, pose, pivot, LandmarkClass::Ridge);
        let ligament = self.splats(&raster, pose, pivot, LandmarkClass::Ligament);
        let splat_vertices = |c: Channel| match c {
            Channel::Ridge => &ridge,
            Channel::Ligament => &ligament,
            Channel::Silhouette => unreachable!(),
        };

        // Bounding box of everything rendered.
        let mut rect = Rect::empty();
        for t in &self.channels {
            match t.channel {
                Channel::Silhouette => {
                    let m = raster.mask.values();
                    for y in 1..h {
                        for x in 0..w {
                            if m[y * w + x] > m[(y - 1) * w + x] {
                                rect.include(x, y);
                            }
                        }
                    }
                }
                c => {
                    for sp in splat_vertices(c) {
                        let u = raster.proj.pixels[sp.vertex];
                        let fx = (u.x - reach).floor().max(0.0) as usize;
                        let fy = (u.y - reach).floor().max(0.0) as usize;
                        rect.include(fx.min(w - 1), fy.min(h - 1));
                        rect.include(((u.x + reach) as usize).min(w - 1), ((u.y + reach) as usize).min(h - 1));
                    }
                }
            }
        }

        let mut loss = 0.0;
        if rect.is_empty() {
            for t in &self.channels {
                loss += t.energy.iter().zip(&t.factor).map(|(e, k)| e * k).sum::<f64>();
            }
            return Ok(Evaluation {
                loss,
                gradient: gradient.then(Vector6::zeros),
            });
        }
        let rect = rect.grown(margin, w, h);
        let (cw, chh) = (rect.width(), rect.height());
        let crop_index = |x: usize, y: usize| (y - rect.y0) * cw + (x - rect.x0);

        let mut per_vertex = vec![Vector2::zeros(); if gradient { raster.proj.pixels.len() } else { 0 }];
        let mut mask_grad = if gradient { vec![0.0; w * h] } else { Vec::new() };
        let mut facing_grad = Vector6::zeros();
        let tau = self.splat_softness;
        let r0 = self.splat_radius;
        let edge = log_sigmoid(SPLAT_TAIL);

        for t in &self.channels {
            // Rendered channel on the crop.
            let mut rendered = vec![0.0; cw * chh];
            match t.channel {
                Channel::Silhouette => {
                    let m = raster.mask.values();
                    for y in rect.y0.max(1)..=rect.y1 {
                        for x in rect.x0..=rect.x1 {
                            rendered[crop_index(x, y)] = (m[y * w + x] - m[(y - 1) * w + x]).max(0.0);
                        }
                    }
                }
                c => {
                    // Soft union: log(1 − value) accumulates per disc, shifted to vanish at the
                    // footprint edge.
                    let mut log_empty = vec![0.0; cw * chh];
                    for sp in splat_vertices(c) {
                        let u = raster.proj.pixels[sp.vertex];
                        for_disc_pixels(u, reach, &rect, |x, y, q| {
                            let d = (q - u).norm();
                            let s = (r0 - d) / tau;
                            log_empty[crop_index(x, y)] += sp.weight * (log_sigmoid(-s) - edge).min(0.0);
                        });
                    }
                    for (r, l) in rendered.iter_mut().zip(&log_empty) {
                        *r = 1.0 - l.exp();
                    }
                }
            }

            // The rendered channel is rescaled to the target's mass before comparison.
            let rendered_mass: f64 = rendered.iter().sum();
            if rendered_mass <= 1e-12 {
                loss += t.energy.iter().zip(&t.factor).map(|(e, k)| e * k).sum::<f64>();
                continue;
            }
            let rho = if t.mass > 0.0 { t.mass / rendered_mass } else { 1.0 };
            let mut grad_rendered = vec![0.0; if gradient { cw * chh } else { 0 }];
            for (si, &r) in self.radii.iter().enumerate() {
                let k = t.factor[si];
                let mut b = rendered.clone();
                blur(&mut b, cw, chh, r, &mut self.tmp);
                let target = &t.blurred[si];
                let mut inside_target = 0.0;
                let mut sq = 0.0;
                let mut mass_term = 0.0;
                for y in rect.y0..=rect.y1 {
                    for x in rect.x0..=rect.x1 {
                        let ci = crop_index(x, y);
                        let tv = target[y * w + x];
                        inside_target += tv * tv;
                        let d = rho * b[ci] - tv;
                        sq += d * d;
                        mass_term += 2.0 * k * d * b[ci];
                        b[ci] = 2.0 * k * d * rho;
                    }
                }
                loss += k * (sq + (t.energy[si] - inside_target).max(0.0));
                if gradient {
                    blur(&mut b, cw, chh, r, &mut self.tmp);
                    // The mass of the render enters through rho.
                    let shift = if t.mass > 0.0 { rho * mass_term / rendered_mass } else { 0.0 };
                    for (g, v) in grad_rendered.iter_mut().zip(&b) {
                        *g += v - shift;
                    }
                }
            }
            if !gradient {
                continue;
            }

            match t.channel {
                Channel::Silhouette => {
                    let m = raster.mask.values();
                    for y in rect.y0.max(1)..=rect.y1 {
                        for x in rect.x0..=rect.x1 {
                            let i = y * w + x;
                            if m[i] > m[i - w] {
                                let g = grad_rendered[crop_index(x, y)];
                                mask_grad[i] += g;
                                mask_grad[i - w] -= g;
                            }
                        }
                    }
                }
                c => {
                    for sp in splat_vertices(c) {
                        let u = raster.proj.pixels[sp.vertex];
                        let mut acc = Vector2::zeros();
                        let mut dweight = 0.0;
                        for_disc_pixels(u, reach, &rect, |x, y, q| {
                            let ci = crop_index(x, y);
                            let g = grad_rendered[ci];
                            if g == 0.0 {
                                return;
                            }
                            let off = u - q;
                            let d = off.norm();
                            let s = (r0 - d) / tau;
                            dweight -= g * (1.0 - rendered[ci]) * (log_sigmoid(-s) - edge).min(0.0);
                            if d == 0.0 {
                                return;
                            }
                            // d(value)/d(u) = w·(1 − value)·φ·d(s)/d(u), with d(s)/d(u) = −off/(d·τ).
                            acc -= off * (sp.weight * g * (1.0 - rendered[ci]) * sigmoid(s) / (d * tau));
                        });
                        per_vertex[sp.vertex] += acc;
                        facing_grad += sp.dweight * dweight;
                    }
                }
            }
        }

        let grad = if gradient {
            let splat = chart_gradient(&raster.proj, &per_vertex, pivot) + facing_grad;
            if self.channels.iter().any(|t| t.channel == Channel::Silhouette) {
                self.renderer.backprop(&raster, &mask_grad, pivot).map(|g| g + splat)
            } else {
                Some(splat)
            }
        } else {
            None
        };
        Ok(Evaluation { loss, gradient: grad })
    }
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Visits crop pixels whose centers lie within `reach` of `u`.
fn for_disc_pixels(u: Point2, reach: f64, rect: &Rect, mut f: impl FnMut(usize, usize, Point2)) {
    let x0 = ((u.x - reach - 0.5).ceil().max(rect.x0 as f64)) as usize;
    let y0 = ((u.y - reach - 0.5).ceil().max(rect.y0 as f64)) as usize;
    let x1 = (u.x + reach - 0.5).floor().min(rect.x1 as f64);
    let y1 = (u.y + reach - 0.5).floor().min(rect.y1 as f64);
    if x1 < x0 as f64 || y1 < y0 as f64 {
        return;
    }
    let r2 = reach * reach;
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            let q = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
            if (q - u).norm_squared() <= r2 {
                f(x, y, q);
            }
        }
    }
}

/// One landmark-map registration from `init`, after ligament pre-alignment.
pub fn landmark_render_run(
    problem: &RegistrationProblem,
    init: RigidPose,
    cfg: &OptimizerConfig,
    restart_index: usize,
    seed: u64,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let mut obj = LandmarkObjective::new(problem, cfg)?;
    let start = obj.prealign(init, cfg.landmark.prealign_rounds);
    let out = descend(&mut obj, start, &problem.mesh.centroid(), cfg.iterations, &cfg.step)?;
    Ok(RegistrationResult {
        pose: out.pose,
        final_loss: *out.trace.last().expect("trace holds the start"),
        loss_trace: out.trace,
        restart_index,
        converged: out.converged,
        seed,
    })
}

/// Landmark-map registration from `cfg.restarts` random starts; keeps the lowest loss.
pub fn landmark_render_register(problem: &RegistrationProblem, cfg: &OptimizerConfig) -> Result<RegistrationResult> {
    Ok(multi_start(problem, Method::LandmarkRender, cfg)?.best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::meshproc::shapes::{liver_blob, BlobParams};
    use crate::register::descent::finite_difference_gradient;
    use crate::register::init::base_rotation;
    use crate::render::{extract_view_silhouette, render_landmarks, render_silhouette};

    fn case() -> (RegistrationProblem, RigidPose) {
        let mesh = liver_blob(&BlobParams {
            subdivisions: 2,
            ..Default::default()
        });
        let intr = CameraIntrinsics::pinhole(500.0, 500.0, 160.0, 120.0, 320, 240);
        let gt = base_rotation(&mesh.anterior)
            .compose(&RigidPose::rot_y(0.2))
            .with_translation(Vector3::new(5.0, -5.0, 450.0));
        let mut map = render_landmarks(&mesh, &mesh.labels, &gt, &intr, 1.0).unwrap();
        let hard = render_silhouette(&mesh, &gt, &intr, 1.0, 0.0).unwrap();
        map.paint(Channel::Silhouette, &extract_view_silhouette(&hard, 1.0).channel(Channel::Silhouette));
        let labels = mesh.labels.clone();
        (RegistrationProblem::new(mesh, labels, map, intr).unwrap(), gt)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (problem, gt) = case();
        let cfg = OptimizerConfig {
            render_scale: 0.5,
            ..OptimizerConfig::default()
        };
        let mut obj = LandmarkObjective::new(&problem, &cfg).unwrap();
        for delta in [
            Vector6::new(0.03, -0.02, 0.01, 4.0, -3.0, 6.0),
            Vector6::new(0.15, 0.1, -0.1, -10.0, 8.0, 30.0),
            Vector6::new(-0.2, 0.25, 0.3, 20.0, 10.0, -40.0),
        ] {
            let pose = gt.perturbed(&delta, &gt.pivot_for(&problem.mesh.centroid()));
            let pivot = pose.pivot_for(&problem.mesh.centroid());
            let g = obj.evaluate(&pose, &pivot, true).unwrap().gradient.unwrap();
            let fd = finite_difference_gradient(&mut obj, &pose, &pivot).unwrap();
            let err = (g - fd).norm() / fd.norm();
            assert!(err < 5e-3, "analytic {g:?} fd {fd:?}");
        }
    }

    #[test]
    fn starting_at_the_truth_does_not_increase_the_loss() {
        let (problem, gt) = case();
        let cfg = OptimizerConfig {
            iterations: 20,
            restarts: 1,
            ..OptimizerConfig::default()
        };
        let r = landmark_render_run(&problem, gt, &cfg, 0, 0).unwrap();
        assert!(r.final_loss <= r.loss_trace[0]);
        assert!(r.pose.is_valid());
    }
}
