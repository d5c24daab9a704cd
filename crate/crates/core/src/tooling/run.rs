//! One registration method applied to a loaded case.

use crate::error::{Error, Result};
use nalgebra::Vector3;

use crate::geometry::{Point2, Point3, RigidPose};
use crate::meshproc::LandmarkClass;
use crate::metrics::reprojection_error;
use crate::register::{
    base_rotation, curve_correspondences, multi_start, pnp_ransac_with_recompute, pnp_register, Correspondence, Method,
    OptimizerConfig, RegistrationProblem, RegistrationResult,
};
use crate::tooling::CaseBundle;

/// Correspondence pairs sampled along each landmark curve for the PnP methods.
const CURVE_SAMPLES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RegisterMethod {
    Pnp,
    PnpRansac,
    Silhouette,
    LandmarkDr,
    ChamferDr,
}

impl RegisterMethod {
    /// Optimizer defaults of the method.
    pub fn config(self) -> OptimizerConfig {
        match self {
            RegisterMethod::LandmarkDr => OptimizerConfig::landmark_render(),
            RegisterMethod::ChamferDr => OptimizerConfig::chamfer(),
            RegisterMethod::Silhouette | RegisterMethod::Pnp | RegisterMethod::PnpRansac => OptimizerConfig::silhouette(),
        }
    }
}

/// Settings of the PnP methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSettings {
    /// RANSAC inlier threshold (pixels).
    pub threshold: f64,
    pub max_iterations: usize,
}

impl Default for PnpSettings {
    fn default() -> Self {
        Self {
            threshold: 10.0,
            max_iterations: 1000,
        }
    }
}

/// The chosen restart and every restart's result, in restart order.
#[derive(Debug)]
pub struct RegistrationOutcome {
    pub best: RegistrationResult,
    pub restarts: Vec<Result<RegistrationResult>>,
}

struct CurvePair {
    model: Vec<Point3>,
    image: Vec<Point2>,
}

fn curve_pairs(problem: &RegistrationProblem) -> Result<Vec<CurvePair>> {
    let intr = &problem.intr;
    let mut pairs = Vec::new();
    for class in LandmarkClass::ALL {
        let model: Vec<Point3> = problem.landmarks3d.class(class).iter().map(|&v| problem.mesh.vertices[v]).collect();
        let pixels = problem.target2d.channel(class.into()).pixels();
        if model.is_empty() || pixels.is_empty() {
            continue;
        }
        let image = pixels
            .into_iter()
            .map(|(x, y)| {
                intr.undistort(&Point2::new(x as f64 + 0.5, y as f64 + 0.5))
            })
            .collect::<Result<Vec<_>>>()?;
        pairs.push(CurvePair { model, image });
    }
    if pairs.is_empty() {
        return Err(Error::DegenerateConfiguration("no landmark class appears in both 3D and 2D".into()));
    }
    Ok(pairs)
}

fn correspondences(pairs: &[CurvePair], flips: usize) -> Vec<Correspondence> {
    pairs
        .iter()
        .enumerate()
        .flat_map(|(i, p)| curve_correspondences(&p.model, &p.image, CURVE_SAMPLES, flips >> i & 1 == 1))
        .collect()
}

fn score(problem: &RegistrationProblem, pose: &RigidPose) -> f64 {
    reprojection_error(pose, &problem.landmarks3d, &problem.mesh, &problem.target2d, &problem.intr)
        .ok()
        .and_then(|r| r.combined())
        .unwrap_or(f64::INFINITY)
}

fn single(pose: RigidPose, loss: f64, seed: u64) -> RegistrationOutcome {
    let best = RegistrationResult {
        pose,
        final_loss: loss,
        loss_trace: vec![loss],
        restart_index: 0,
        converged: true,
        seed,
    };
    RegistrationOutcome {
        best: best.clone(),
        restarts: vec![Ok(best)],
    }
}

/// PnP on curve correspondences, trying both traversal directions of every curve and
/// keeping the pose with the lowest reprojection error.
fn pnp_from_curves(problem: &RegistrationProblem, seed: u64) -> Result<RegistrationOutcome> {
    let pairs = curve_pairs(problem)?;
    let mut best: Option<(f64, RigidPose)> = None;
    let mut last_err = None;
    for flips in 0..1usize << pairs.len() {
        match pnp_register(&correspondences(&pairs, flips), &problem.intr) {
            Ok(pose) => {
                let s = score(problem, &pose);
                if best.as_ref().map_or(true, |(b, _)| s < *b) {
                    best = Some((s, pose));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((s, pose)) => Ok(single(pose, s, seed)),
        None => Err(last_err.expect("at least one orientation was tried")),
    }
}

/// RANSAC over the correspondences of both traversal directions of every curve, followed
/// by nearest-neighbour correspondence recomputation.
fn pnp_ransac_from_curves(problem: &RegistrationProblem, settings: &PnpSettings, seed: u64) -> Result<RegistrationOutcome> {
    let pairs = curve_pairs(problem)?;
    let mut corrs = correspondences(&pairs, 0);
    corrs.extend(correspondences(&pairs, usize::MAX));
    let groups: Vec<(&[Point3], &[Point2])> = pairs.iter().map(|p| (p.model.as_slice(), p.image.as_slice())).collect();
    let outcome =
        pnp_ransac_with_recompute(&corrs, &groups, &problem.intr, settings.threshold, settings.max_iterations, seed)?;
    Ok(single(outcome.pose, score(problem, &outcome.pose), seed))
}

/// Registers the bundle's mesh to its 2D landmarks with `method`.
pub fn register_bundle(
    bundle: &CaseBundle,
    method: RegisterMethod,
    cfg: &OptimizerConfig,
    pnp: &PnpSettings,
) -> Result<RegistrationOutcome> {
    register_problem(&bundle.problem()?, method, cfg, pnp)
}

/// Start of the optimizers when none is configured: anterior side toward the camera at
/// 500 mm depth.
pub fn default_start(problem: &RegistrationProblem) -> RigidPose {
    base_rotation(&problem.mesh.anterior).with_translation(Vector3::new(0.0, 0.0, 500.0))
}

/// Like [`register_bundle`] on an already assembled problem. Unset canonical and Chamfer
/// starts default to [`default_start`].
pub fn register_problem(
    problem: &RegistrationProblem,
    method: RegisterMethod,
    cfg: &OptimizerConfig,
    pnp: &PnpSettings,
) -> Result<RegistrationOutcome> {
    let mut cfg = cfg.clone();
    let start = default_start(problem);
    cfg.canonical_pose.get_or_insert(start);
    cfg.chamfer.initial_pose.get_or_insert(start);
    let cfg = &cfg;
    let optimizer = match method {
        RegisterMethod::Pnp => return pnp_from_curves(problem, cfg.seed),
        RegisterMethod::PnpRansac => return pnp_ransac_from_curves(problem, pnp, cfg.seed),
        RegisterMethod::Silhouette => Method::Silhouette,
        RegisterMethod::LandmarkDr => Method::LandmarkRender,
        RegisterMethod::ChamferDr => Method::Chamfer,
    };
    let out = multi_start(problem, optimizer, cfg)?;
    Ok(RegistrationOutcome {
        best: out.best,
        restarts: out.all,
    })
}
