//! Concurrent restarts of a render-and-compare optimizer.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::register::chamfer::chamfer_run;
use crate::register::landmark::landmark_render_run;
use crate::register::silhouette::silhouette_run;
use crate::register::{init_random_pose, restart_seed, Method, OptimizerConfig, RegistrationProblem, RegistrationResult};

/// Best restart plus every restart's outcome, in restart order.
#[derive(Debug)]
pub struct MultiStart {
    pub best: RegistrationResult,
    pub all: Vec<Result<RegistrationResult>>,
}

fn run(
    method: Method,
    problem: &RegistrationProblem,
    init: RigidPose,
    cfg: &OptimizerConfig,
    index: usize,
    seed: u64,
) -> Result<RegistrationResult> {
    match method {
        Method::Silhouette => silhouette_run(problem, init, cfg, index, seed),
        Method::LandmarkRender => landmark_render_run(problem, init, cfg, index, seed),
        Method::Chamfer => chamfer_run(problem, init, cfg, index, seed),
    }
}

/// Starting poses of `cfg.restarts` restarts. Restart 0 of the Chamfer method uses its
/// configured start and restart 0 of the silhouette method the canonical pose when one is
/// configured; all others are random.
pub fn restart_inits(problem: &RegistrationProblem, method: Method, cfg: &OptimizerConfig) -> Vec<(RigidPose, u64)> {
    (0..cfg.restarts)
        .map(|r| {
            let seed = restart_seed(cfg.seed, r);
            let fixed = match (method, r) {
                (Method::Chamfer, 0) => Some(cfg.chamfer.start_pose()),
                (Method::Silhouette, 0) => cfg.canonical_pose,
                _ => None,
            };
            (fixed.unwrap_or_else(|| init_random_pose(&problem.mesh, cfg.depth_range, seed)), seed)
        })
        .collect()
}

/// Runs `method` from every restart and keeps the lowest final loss, ties going to the
/// lower restart index.
pub fn multi_start(problem: &RegistrationProblem, method: Method, cfg: &OptimizerConfig) -> Result<MultiStart> {
    cfg.validate()?;
    let inits = restart_inits(problem, method, cfg);
    multi_start_from(problem, method, cfg, &inits)
}

/// Like [`multi_start`] with explicit `(start pose, seed)` pairs.
pub fn multi_start_from(
    problem: &RegistrationProblem,
    method: Method,
    cfg: &OptimizerConfig,
    inits: &[(RigidPose, u64)],
) -> Result<MultiStart> {
    cfg.validate()?;
    let all: Vec<Result<RegistrationResult>> = inits
        .par_iter()
        .enumerate()
        .map(|(i, (init, seed))| run(method, problem, *init, cfg, i, *seed))
        .collect();
    let best = all
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .filter(|r| r.final_loss.is_finite())
        .min_by(|a, b| a.final_loss.total_cmp(&b.final_loss).then(a.restart_index.cmp(&b.restart_index)))
        .cloned()
        .ok_or(Error::AllRestartsFailed { restarts: inits.len() })?;
    Ok(MultiStart { best, all })
}
