//! Normalized gradient descent on the pose chart with monotone step acceptance.

use nalgebra::{Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidPose};
use crate::register::{StepRule, StepSchedule};

/// Step used by the finite-difference gradient fallback (radians / millimetres).
pub(crate) const FD_STEP: f64 = 1e-4;

/// Halvings tried before an iteration gives up and keeps the current pose.
const MAX_HALVINGS: usize = 4;

pub(crate) struct Evaluation {
    pub loss: f64,
    /// Chart gradient about the pivot; `None` asks for finite differences.
    pub gradient: Option<Vector6<f64>>,
}

pub(crate) trait Objective {
    /// Called once before each iteration; objectives that resample pixels return
    /// `true` when earlier losses are no longer comparable.
    fn begin_iteration(&mut self, _iteration: usize) -> bool {
        false
    }

    fn evaluate(&mut self, pose: &RigidPose, pivot: &Vector3<f64>, gradient: bool) -> Result<Evaluation>;
}

pub(crate) struct Descent {
    pub pose: RigidPose,
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// Central differences of the loss in the six chart coordinates.
pub(crate) fn finite_difference_gradient(
    obj: &mut impl Objective,
    pose: &RigidPose,
    pivot: &Vector3<f64>,
) -> Result<Vector6<f64>> {
    let mut g = Vector6::zeros();
    for k in 0..6 {
        let mut d = Vector6::zeros();
        d[k] = FD_STEP;
        let lp = obj.evaluate(&pose.perturbed(&d, pivot), pivot, false)?.loss;
        d[k] = -FD_STEP;
        let lm = obj.evaluate(&pose.perturbed(&d, pivot), pivot, false)?.loss;
        g[k] = (lp - lm) / (2.0 * FD_STEP);
    }
    Ok(g)
}

fn normalized_step(g: &Vector6<f64>, rotation: f64, translation: f64) -> Vector6<f64> {
    let gr = Vector3::new(g[0], g[1], g[2]);
    let gt = Vector3::new(g[3], g[4], g[5]);
    let r = if gr.norm() > 0.0 { -gr / gr.norm() * rotation } else { Vector3::zeros() };
    let t = if gt.norm() > 0.0 { -gt / gt.norm() * translation } else { Vector3::zeros() };
    Vector6::new(r.x, r.y, r.z, t.x, t.y, t.z)
}

/// Runs `iterations` steps from `init`, rotating about the camera-frame position of the
/// model point `center`. Rotation and translation steps each have the scheduled length
/// along their own normalized gradient block; a step is kept only if it lowers the loss,
/// otherwise it is halved up to four times.
pub(crate) fn descend(
    obj: &mut impl Objective,
    init: RigidPose,
    center: &Point3,
    iterations: usize,
    schedule: &StepSchedule,
) -> Result<Descent> {
    match schedule.rule {
        StepRule::Normalized => descend_normalized(obj, init, center, iterations, schedule),
        StepRule::Adam => descend_adam(obj, init, center, iterations, schedule),
    }
}

fn descend_normalized(
    obj: &mut impl Objective,
    init: RigidPose,
    center: &Point3,
    iterations: usize,
    schedule: &StepSchedule,
) -> Result<Descent> {
    let mut pose = init;
    obj.begin_iteration(0);
    let mut current = obj.evaluate(&pose, &pose.pivot_for(center), true)?;
    if !current.loss.is_finite() {
        return Err(Error::NoConvergence {
            iterations: 0,
            residual: current.loss,
        });
    }
    let mut trace = Vec::with_capacity(iterations + 1);
    trace.push(current.loss);
    let mut last_gain = f64::INFINITY;
    for k in 0..iterations {
        let pivot = pose.pivot_for(center);
        if k > 0 && obj.begin_iteration(k) {
            current = obj.evaluate(&pose, &pivot, true)?;
        }
        let gradient = match current.gradient {
            Some(g) => g,
            None => finite_difference_gradient(obj, &pose, &pivot)?,
        };
        let f = schedule.fraction(k, iterations);
        let mut accepted = None;
        let mut scale = f;
        for _ in 0..=MAX_HALVINGS {
            let delta = normalized_step(&gradient, schedule.rotation * scale, schedule.translation * scale);
            if delta == Vector6::zeros() {
                break;
            }
            let candidate = pose.perturbed(&delta, &pivot);
            match obj.evaluate(&candidate, &candidate.pivot_for(center), true) {
                Ok(e) if e.loss.is_finite() && e.loss < current.loss => {
                    accepted = Some((candidate, e));
                    break;
                }
                Ok(_) | Err(Error::EmptyProjection) => scale *= 0.5,
                Err(e) => return Err(e),
            }
        }
        last_gain = match accepted {
            Some((candidate, e)) => {
                let gain = (current.loss - e.loss) / current.loss.abs().max(f64::MIN_POSITIVE);
                pose = candidate;
                current = e;
                gain
            }
            None => 0.0,
        };
        trace.push(current.loss);
    }
    Ok(Descent {
        pose,
        trace,
        converged: last_gain < 1e-3,
    })
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-12;

fn descend_adam(
    obj: &mut impl Objective,
    init: RigidPose,
    center: &Point3,
    iterations: usize,
    schedule: &StepSchedule,
) -> Result<Descent> {
    let mut pose = init;
    let mut m = Vector6::zeros();
    let mut v = Vector6::zeros();
    let mut trace = Vec::with_capacity(iterations + 1);
    let mut best: Option<(f64, RigidPose)> = None;
    for k in 0..=iterations {
        let pivot = pose.pivot_for(center);
        let fresh = obj.begin_iteration(k);
        let e = match obj.evaluate(&pose, &pivot, k < iterations) {
            Ok(e) => e,
            Err(Error::EmptyProjection) if k > 0 => break,
            Err(e) => return Err(e),
        };
        if !e.loss.is_finite() {
            if k == 0 {
                return Err(Error::NoConvergence {
                    iterations: 0,
                    residual: e.loss,
                });
            }
            break;
        }
        if fresh {
            if let Some((l, p)) = best.as_mut() {
                *l = obj.evaluate(p, &p.pivot_for(center), false)?.loss;
            }
        }
        if best.as_ref().map_or(true, |(l, _)| e.loss < *l) {
            best = Some((e.loss, pose));
        }
        trace.push(best.as_ref().expect("set above").0);
        if k == iterations {
            break;
        }
        let g = match e.gradient {
            Some(g) => g,
            None => finite_difference_gradient(obj, &pose, &pivot)?,
        };
        m = m * ADAM_BETA1 + g * (1.0 - ADAM_BETA1);
        v = v * ADAM_BETA2 + g.component_mul(&g) * (1.0 - ADAM_BETA2);
        let t = (k + 1) as i32;
        let mh = m / (1.0 - ADAM_BETA1.powi(t));
        let vh = v / (1.0 - ADAM_BETA2.powi(t));
        let f = schedule.fraction(k, iterations);
        let delta = Vector6::from_fn(|i, _| {
            let lr = if i < 3 { schedule.rotation } else { schedule.translation } * f;
            -lr * mh[i] / (vh[i].sqrt() + ADAM_EPS)
        });
        pose = pose.perturbed(&delta, &pivot);
    }
    let (_, best_pose) = best.expect("the start is evaluated");
    let n = trace.len();
    let converged = n >= 2 && (trace[n - 2] - trace[n - 1]) <= 1e-3 * trace[n - 1].abs();
    trace.resize(iterations + 1, *trace.last().expect("non-empty"));
    Ok(Descent {
        pose: best_pose,
        trace,
        converged,
    })
}
