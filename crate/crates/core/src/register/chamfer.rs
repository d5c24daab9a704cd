//! Two-phase Chamfer registration: soft-silhouette plus 2D Chamfer descent, then a
//! refinement on the correspondences found at its end.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Point2, RigidPose};
use crate::meshproc::LandmarkClass;
use crate::pixels::{distance_transform, DistanceField};
use crate::register::descent::{descend, Evaluation, Objective};
use crate::register::pnp::refine_lm;
use crate::register::silhouette::area_downsample;
use crate::register::{multi_start, Correspondence, Method, OptimizerConfig, RegistrationProblem, RegistrationResult};
use crate::render::{chart_gradient, SilhouetteRaster, SilhouetteRenderer};
use crate::spatial::KdTree;

struct ClassTarget {
    class: LandmarkClass,
    field: DistanceField,
    /// Strided sample of target pixel centers for the reverse direction.
    samples: Vec<Point2>,
}

pub(crate) struct ChamferObjective<'p> {
    renderer: SilhouetteRenderer<'p>,
    problem: &'p RegistrationProblem,
    scale: f64,
    mask: Option<Vec<f64>>,
    targets: Vec<ClassTarget>,
    lambda: f64,
    /// Squared-distance charge for a class whose landmarks are all hidden.
    miss_penalty: f64,
}

impl<'p> ChamferObjective<'p> {
    pub(crate) fn new(problem: &'p RegistrationProblem, cfg: &OptimizerConfig) -> Result<Self> {
        let renderer = SilhouetteRenderer::new(&problem.mesh, &problem.intr, cfg.render_scale, cfg.softness)?;
        let (w, h) = (renderer.intrinsics().width as usize, renderer.intrinsics().height as usize);
        let mask = problem
            .silhouette_target
            .as_ref()
            .map(|m| area_downsample(m, cfg.render_scale, w, h));
        let mut targets = Vec::new();
        for class in LandmarkClass::ALL {
            let pixels = problem.target2d.channel(class.into());
            if !pixels.any() || problem.landmarks3d.class(class).is_empty() {
                continue;
            }
            let all = pixels.pixels();
            let stride = all.len().div_ceil(cfg.chamfer.reverse_samples.max(1));
            let samples = all
                .iter()
                .step_by(stride)
                .map(|&(x, y)| Point2::new(x as f64 + 0.5, y as f64 + 0.5))
                .collect();
            targets.push(ClassTarget {
                class,
                field: distance_transform(&pixels),
                samples,
            });
        }
        if targets.is_empty() {
            return Err(Error::InvalidArgument("no landmark class has both 3D and 2D annotations".into()));
        }
        let (fw, fh) = (f64::from(problem.intr.width), f64::from(problem.intr.height));
        Ok(Self {
            renderer,
            problem,
            scale: cfg.render_scale,
            mask,
            targets,
            lambda: cfg.chamfer.lambda,
            miss_penalty: fw * fw + fh * fh,
        })
    }

    fn visible(&self, raster: &SilhouetteRaster, class: LandmarkClass) -> Vec<usize> {
        self.problem
            .landmarks3d
            .class(class)
            .iter()
            .copied()
            .filter(|&v| raster.depth.vertex_visible(&raster.proj, v))
            .collect()
    }

    /// Full-resolution pixel of a vertex from the render-resolution projection.
    fn full_pixel(&self, raster: &SilhouetteRaster, v: usize) -> Point2 {
        Point2::from(raster.proj.pixels[v].coords / self.scale)
    }

    fn nearest_target(&self, t: &ClassTarget, u: &Point2) -> Point2 {
        let (x, y) = t.field.nearest_to(u.x, u.y).expect("target class is non-empty");
        Point2::new(x as f64 + 0.5, y as f64 + 0.5)
    }

    /// Forward correspondences (visible landmark vertex, nearest target pixel) at `pose`.
    pub(crate) fn correspondences(&self, pose: &RigidPose) -> Result<Vec<Correspondence>> {
        let raster = self.renderer.render(pose, false)?;
        let undistorted = self.problem.intr;
        let mut out = Vec::new();
        for t in &self.targets {
            for v in self.visible(&raster, t.class) {
                let q = self.nearest_target(t, &self.full_pixel(&raster, v));
                let p2 = if undistorted.has_distortion() { undistorted.undistort(&q)? } else { q };
                out.push(Correspondence::new(self.problem.mesh.vertices[v], p2));
            }
        }
        Ok(out)
    }
}

impl Objective for ChamferObjective<'_> {
    fn evaluate(&mut self, pose: &RigidPose, pivot: &Vector3<f64>, gradient: bool) -> Result<Evaluation> {
        let raster = self.renderer.render(pose, gradient)?;
        let mut loss = 0.0;
        let mut total = nalgebra::Vector6::zeros();
        let mut analytic = true;

        if let Some(mask) = &self.mask {
            let values = raster.mask.values();
            let n = values.len() as f64;
            let mut grad = vec![0.0; if gradient { values.len() } else { 0 }];
            for (i, (&v, &t)) in values.iter().zip(mask).enumerate() {
                let d = v - t;
                loss += d * d / n;
                if gradient {
                    grad[i] = 2.0 * d / n;
                }
            }
            if gradient {
                match self.renderer.backprop(&raster, &grad, pivot) {
                    Some(g) => total += g,
                    None => analytic = false,
                }
            }
        }

        let mut per_vertex = vec![Vector2::zeros(); if gradient { raster.proj.pixels.len() } else { 0 }];
        // Full-resolution pixel gradients map to render resolution through the scale.
        let to_render = 2.0 * self.lambda / self.scale;
        for t in &self.targets {
            let vis = self.visible(&raster, t.class);
            if vis.is_empty() {
                loss += self.lambda * 2.0 * self.miss_penalty;
                continue;
            }
            let points: Vec<Point2> = vis.iter().map(|&v| self.full_pixel(&raster, v)).collect();
            let nf = points.len() as f64;
            for (&v, u) in vis.iter().zip(&points) {
                let off = u - self.nearest_target(t, u);
                loss += self.lambda * off.norm_squared() / nf;
                if gradient {
                    per_vertex[v] += off * (to_render / nf);
                }
            }
            let tree = KdTree::new(points.iter().map(|p| [p.x, p.y]).collect());
            let nr = t.samples.len() as f64;
            for q in &t.samples {
                let (k, d2) = tree.nearest(&[q.x, q.y]).expect("non-empty");
                loss += self.lambda * d2 / nr;
                if gradient {
                    per_vertex[vis[k]] += (points[k] - q) * (to_render / nr);
                }
            }
        }
        if gradient {
            total += chart_gradient(&raster.proj, &per_vertex, pivot);
        }
        Ok(Evaluation {
            loss,
            gradient: (gradient && analytic).then_some(total),
        })
    }
}

/// Frozen-correspondence refinement: Levenberg–Marquardt on the pinhole reprojection
/// residuals of undistorted correspondences. Returns the pose and the mean squared
/// residual before and after every iteration.
pub fn refine_on_correspondences(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    init: RigidPose,
    iterations: usize,
) -> Result<(RigidPose, Vec<f64>)> {
    if corrs.is_empty() {
        return Err(Error::EmptySet);
    }
    let (pose, mut trace) = refine_lm(corrs, &intr.without_distortion(), init, iterations);
    // Early termination leaves the remaining iterations at the final value.
    let last = *trace.last().expect("trace holds the start");
    trace.resize(iterations + 1, last);
    Ok((pose, trace))
}

/// One two-phase Chamfer run from `init`.
pub fn chamfer_run(
    problem: &RegistrationProblem,
    init: RigidPose,
    cfg: &OptimizerConfig,
    restart_index: usize,
    seed: u64,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let mut obj = ChamferObjective::new(problem, cfg)?;
    let phase1 = descend(&mut obj, init, &problem.mesh.centroid(), cfg.iterations, &cfg.step)?;
    let mut trace = phase1.trace;
    let mut pose = phase1.pose;
    let mut converged = phase1.converged;
    if cfg.chamfer.refine_iterations > 0 {
        let corrs = obj.correspondences(&pose)?;
        if corrs.len() >= 3 {
            let (refined, refine_trace) =
                refine_on_correspondences(&corrs, &problem.intr, pose, cfg.chamfer.refine_iterations)?;
            if refined.is_valid() && refine_trace.last().is_some_and(|v| v.is_finite()) {
                pose = refined;
                converged = refine_trace.windows(2).last().is_some_and(|w| w[0] - w[1] <= 1e-3 * w[0].abs());
                trace.extend_from_slice(&refine_trace[1..]);
            }
        }
    }
    Ok(RegistrationResult {
        pose,
        final_loss: *trace.last().expect("trace holds the start"),
        loss_trace: trace,
        restart_index,
        converged,
        seed,
    })
}

/// Two-phase Chamfer registration from `cfg.chamfer.start_pose()`, plus random starts
/// when `cfg.restarts > 1`.
pub fn chamfer_register(problem: &RegistrationProblem, cfg: &OptimizerConfig) -> Result<RegistrationResult> {
    Ok(multi_start(problem, Method::Chamfer, cfg)?.best)
}
