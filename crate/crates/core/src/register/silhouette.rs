//! Silhouette-only render-and-compare registration with a smooth-L1 image loss.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::register::descent::{descend, Evaluation, Objective};
use crate::register::{restart_seed, OptimizerConfig, RegistrationProblem, RegistrationResult};
use crate::render::{SilhouetteRenderer, SoftMask};

/// Transition point of the smooth-L1 loss, in intensity units.
pub(crate) const SMOOTH_L1_EPS: f64 = 1.0;

#[inline]
pub(crate) fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < SMOOTH_L1_EPS {
        (0.5 * d * d / SMOOTH_L1_EPS, d / SMOOTH_L1_EPS)
    } else {
        (d.abs() - 0.5 * SMOOTH_L1_EPS, d.signum())
    }
}

/// Averages a full-resolution mask onto a `w × h` grid, assigning each source pixel to
/// the target pixel containing its scaled center.
pub(crate) fn area_downsample(mask: &SoftMask, scale: f64, w: usize, h: usize) -> Vec<f64> {
    let mut sum = vec![0.0; w * h];
    let mut count = vec![0u32; w * h];
    for y in 0..mask.height() {
        let ly = ((y as f64 + 0.5) * scale) as usize;
        if ly >= h {
            continue;
        }
        for x in 0..mask.width() {
            let lx = ((x as f64 + 0.5) * scale) as usize;
            if lx < w {
                sum[ly * w + lx] += mask.get(x, y);
                count[ly * w + lx] += 1;
            }
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / f64::from(c) } else { 0.0 }).collect()
}

pub(crate) struct SilhouetteObjective<'p> {
    renderer: SilhouetteRenderer<'p>,
    target: Vec<f64>,
    /// Pixels entering the loss this iteration; `None` uses all of them.
    active: Option<Vec<bool>>,
    fraction: f64,
    seed: u64,
}

impl<'p> SilhouetteObjective<'p> {
    pub(crate) fn new(problem: &'p RegistrationProblem, cfg: &OptimizerConfig, seed: u64) -> Result<Self> {
        let mask = problem
            .silhouette_target
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("silhouette registration needs a target mask".into()))?;
        let renderer = SilhouetteRenderer::new(&problem.mesh, &problem.intr, cfg.render_scale, cfg.softness)?;
        let (w, h) = (renderer.intrinsics().width as usize, renderer.intrinsics().height as usize);
        Ok(Self {
            target: area_downsample(mask, cfg.render_scale, w, h),
            renderer,
            active: None,
            fraction: cfg.pixel_fraction,
            seed,
        })
    }

    /// Loss and per-pixel gradient of the current render.
    pub(crate) fn image_term(&self, values: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let n = match &self.active {
            Some(a) => a.iter().filter(|&&b| b).count().max(1),
            None => values.len(),
        } as f64;
        let mut loss = 0.0;
        let mut grad = grad;
        for (i, (&v, &t)) in values.iter().zip(&self.target).enumerate() {
            if self.active.as_ref().is_some_and(|a| !a[i]) {
                continue;
            }
            let (l, dl) = smooth_l1(v - t);
            loss += l;
            if let Some(g) = grad.as_deref_mut() {
                g[i] = dl / n;
            }
        }
        loss / n
    }
}

impl Objective for SilhouetteObjective<'_> {
    fn begin_iteration(&mut self, iteration: usize) -> bool {
        if self.fraction >= 1.0 {
            return false;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(self.seed, iteration));
        let fraction = self.fraction;
        self.active = Some((0..self.target.len()).map(|_| rng.gen_bool(fraction)).collect());
        true
    }

    fn evaluate(&mut self, pose: &RigidPose, pivot: &Vector3<f64>, gradient: bool) -> Result<Evaluation> {
        let raster = self.renderer.render(pose, gradient)?;
        let mut grad = vec![0.0; if gradient { self.target.len() } else { 0 }];
        let loss = self.image_term(raster.mask.values(), gradient.then_some(grad.as_mut_slice()));
        let gradient = if gradient {
            self.renderer.backprop(&raster, &grad, pivot)
        } else {
            None
        };
        Ok(Evaluation { loss, gradient })
    }
}

/// Gradient descent on the smooth-L1 difference between the soft silhouette and the
/// target liver mask, starting from `init`.
pub fn silhouette_register(
    problem: &RegistrationProblem,
    init: RigidPose,
    cfg: &OptimizerConfig,
) -> Result<RegistrationResult> {
    silhouette_run(problem, init, cfg, 0, cfg.seed)
}

pub(crate) fn silhouette_run(
    problem: &RegistrationProblem,
    init: RigidPose,
    cfg: &OptimizerConfig,
    restart_index: usize,
    seed: u64,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let mut obj = SilhouetteObjective::new(problem, cfg, seed)?;
    let out = descend(&mut obj, init, &problem.mesh.centroid(), cfg.iterations, &cfg.step)?;
    Ok(RegistrationResult {
        pose: out.pose,
        final_loss: *out.trace.last().expect("trace holds the start"),
        loss_trace: out.trace,
        restart_index,
        converged: out.converged,
        seed,
    })
}
