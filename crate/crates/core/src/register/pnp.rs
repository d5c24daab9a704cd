//! Perspective-n-point: EPnP / planar homography initialization, Levenberg–Marquardt
//! refinement and RANSAC.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, Matrix3, Matrix6, SMatrix, SVector, Vector2, Vector3, Vector4, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{nearest_rotation, skew, CameraIntrinsics, Point2, Point3, RigidPose};
use crate::register::Correspondence;
use crate::spatial::KdTree;

const MIN_POINTS: usize = 4;
const LM_MAX_ITERATIONS: usize = 100;
const LM_COST_TOLERANCE: f64 = 1e-10;
const RECOMPUTE_ROUNDS: usize = 10;

/// Relative singular-value level below which a point cloud counts as lower-dimensional.
const RANK_TOLERANCE: f64 = 1e-9;
const PLANAR_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome {
    pub pose: RigidPose,
    /// Indices of inlier correspondences, ascending.
    pub inliers: Vec<usize>,
}

fn normalized(intr: &CameraIntrinsics, p: &Point2) -> Vector2<f64> {
    Vector2::new((p.x - intr.cx) / intr.fx, (p.y - intr.cy) / intr.fy)
}

fn pinhole(intr: &CameraIntrinsics, x: &Vector3<f64>) -> Option<Point2> {
    (x.z > 0.0).then(|| Point2::new(intr.fx * x.x / x.z + intr.cx, intr.fy * x.y / x.z + intr.cy))
}

/// Pinhole reprojection distance of one correspondence; infinite behind the camera.
pub(crate) fn reprojection_distance(pose: &RigidPose, intr: &CameraIntrinsics, c: &Correspondence) -> f64 {
    match pinhole(intr, &pose.apply(&c.p3).coords) {
        Some(u) => (u - c.p2).norm(),
        None => f64::INFINITY,
    }
}

fn cost(pose: &RigidPose, intr: &CameraIntrinsics, corrs: &[Correspondence]) -> f64 {
    corrs.iter().map(|c| reprojection_distance(pose, intr, c).powi(2)).sum()
}

/// Principal frame of a point set: centroid, axes (columns) and singular values.
fn principal_frame(points: &[Point3]) -> (Vector3<f64>, Matrix3<f64>, Vector3<f64>) {
    let n = points.len() as f64;
    let c: Vector3<f64> = points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    // Signs follow the heavier tail of each axis and the third axis completes a right-handed
    // frame, so the frame moves with the points under rigid motions.
    let orient = |k: usize| {
        let a: Vector3<f64> = eig.eigenvectors.column(idx[k]).into_owned();
        let skew: f64 = points.iter().map(|p| (p.coords - c).dot(&a).powi(3)).sum();
        let spread: f64 = points.iter().map(|p| (p.coords - c).dot(&a).abs().powi(3)).sum();
        let flip = if skew.abs() > 1e-9 * spread { skew < 0.0 } else { a[a.iamax()] < 0.0 };
        if flip {
            -a
        } else {
            a
        }
    };
    let (a0, a1) = (orient(0), orient(1));
    let axes = Matrix3::from_columns(&[a0, a1, a0.cross(&a1)]);
    let sv = Vector3::new(
        eig.eigenvalues[idx[0]].max(0.0).sqrt(),
        eig.eigenvalues[idx[1]].max(0.0).sqrt(),
        eig.eigenvalues[idx[2]].max(0.0).sqrt(),
    );
    (c, axes, sv)
}

fn check_input(corrs: &[Correspondence]) -> Result<(Vector3<f64>, Matrix3<f64>, Vector3<f64>)> {
    if corrs.len() < MIN_POINTS {
        return Err(Error::DegenerateConfiguration(format!(
            "{} correspondences, at least {MIN_POINTS} needed",
            corrs.len()
        )));
    }
    if corrs.iter().any(|c| !(c.p3.coords.iter().chain(c.p2.coords.iter()).all(|v| v.is_finite()))) {
        return Err(Error::InvalidArgument("correspondences must be finite".into()));
    }
    let pts: Vec<Point3> = corrs.iter().map(|c| c.p3).collect();
    let frame = principal_frame(&pts);
    let sv = frame.2;
    if sv[0] == 0.0 || sv[1] <= RANK_TOLERANCE * sv[0] {
        return Err(Error::DegenerateConfiguration("model points are collinear or coincident".into()));
    }
    Ok(frame)
}

/// Rotation and translation taking `model` onto `camera` in the least-squares sense.
fn procrustes(model: &[Vector3<f64>], camera: &[Vector3<f64>]) -> RigidPose {
    let n = model.len() as f64;
    let cm: Vector3<f64> = model.iter().sum::<Vector3<f64>>() / n;
    let cc: Vector3<f64> = camera.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (m, c) in model.iter().zip(camera) {
        h += (c - cc) * (m - cm).transpose();
    }
    let r = nearest_rotation(&h);
    RigidPose::new(r, cc - r * cm)
}

fn epnp(corrs: &[Correspondence], intr: &CameraIntrinsics, frame: &(Vector3<f64>, Matrix3<f64>, Vector3<f64>)) -> Option<RigidPose> {
    let n = corrs.len();
    let (c0, axes, sv) = frame;
    let scale = (1.0 / n as f64).sqrt();
    let ctrl: [Vector3<f64>; 4] = [
        *c0,
        c0 + axes.column(0) * (sv[0] * scale),
        c0 + axes.column(1) * (sv[1] * scale),
        c0 + axes.column(2) * (sv[2] * scale),
    ];
    let basis = Matrix3::from_columns(&[ctrl[1] - ctrl[0], ctrl[2] - ctrl[0], ctrl[3] - ctrl[0]]);
    let inv = basis.try_inverse()?;
    let alphas: Vec<[f64; 4]> = corrs
        .iter()
        .map(|c| {
            let a = inv * (c.p3.coords - ctrl[0]);
            [1.0 - a.sum(), a.x, a.y, a.z]
        })
        .collect();

    let mut m = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (c, a)) in corrs.iter().zip(&alphas).enumerate() {
        let u = normalized(intr, &c.p2);
        for j in 0..4 {
            m[(2 * i, 3 * j)] = a[j];
            m[(2 * i, 3 * j + 2)] = -a[j] * u.x;
            m[(2 * i + 1, 3 * j + 1)] = a[j];
            m[(2 * i + 1, 3 * j + 2)] = -a[j] * u.y;
        }
    }
    let mtm = SMatrix::<f64, 12, 12>::from_iterator((m.transpose() * &m).iter().copied());
    let eig = mtm.symmetric_eigen();
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let kernel: Vec<SVector<f64, 12>> = order[..4].iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect();

    const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let seg = |v: &SVector<f64, 12>, a: usize, b: usize| {
        Vector3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
    };
    let mut l = SMatrix::<f64, 6, 10>::zeros();
    let mut rho = SVector::<f64, 6>::zeros();
    for (row, &(a, b)) in PAIRS.iter().enumerate() {
        let dv: Vec<Vector3<f64>> = kernel.iter().map(|v| seg(v, a, b)).collect();
        let entries = [
            dv[0].dot(&dv[0]),
            2.0 * dv[0].dot(&dv[1]),
            dv[1].dot(&dv[1]),
            2.0 * dv[0].dot(&dv[2]),
            2.0 * dv[1].dot(&dv[2]),
            dv[2].dot(&dv[2]),
            2.0 * dv[0].dot(&dv[3]),
            2.0 * dv[1].dot(&dv[3]),
            2.0 * dv[2].dot(&dv[3]),
            dv[3].dot(&dv[3]),
        ];
        for (k, e) in entries.iter().enumerate() {
            l[(row, k)] = *e;
        }
        rho[row] = (ctrl[a] - ctrl[b]).norm_squared();
    }

    let solve = |cols: &[usize]| -> Option<Vec<f64>> {
        let sub = DMatrix::from_fn(6, cols.len(), |r, c| l[(r, cols[c])]);
        let rhs = DMatrix::from_fn(6, 1, |r, _| rho[r]);
        let x = sub.svd(true, true).solve(&rhs, 1e-12).ok()?;
        Some(x.iter().copied().collect())
    };
    let mut candidates = Vec::new();
    if let Some(b) = solve(&[0, 1, 3, 6]) {
        let b0 = b[0].abs().sqrt();
        if b0 > 0.0 {
            let s = if b[0] < 0.0 { -1.0 } else { 1.0 };
            candidates.push(Vector4::new(b0, s * b[1] / b0, s * b[2] / b0, s * b[3] / b0));
        }
    }
    if let Some(b) = solve(&[0, 1, 2]) {
        let (mut b0, b1) = if b[0] < 0.0 {
            ((-b[0]).sqrt(), if b[2] < 0.0 { (-b[2]).sqrt() } else { 0.0 })
        } else {
            (b[0].sqrt(), if b[2] > 0.0 { b[2].sqrt() } else { 0.0 })
        };
        if b[1] < 0.0 {
            b0 = -b0;
        }
        candidates.push(Vector4::new(b0, b1, 0.0, 0.0));
    }
    if let Some(b) = solve(&[0, 1, 2, 3, 4]) {
        let (mut b0, b1) = if b[0] < 0.0 {
            ((-b[0]).sqrt(), if b[2] < 0.0 { (-b[2]).sqrt() } else { 0.0 })
        } else {
            (b[0].sqrt(), if b[2] > 0.0 { b[2].sqrt() } else { 0.0 })
        };
        if b[1] < 0.0 {
            b0 = -b0;
        }
        let b2 = if b0 != 0.0 { b[3] / b0 } else { 0.0 };
        candidates.push(Vector4::new(b0, b1, b2, 0.0));
    }

    let model: Vec<Vector3<f64>> = corrs.iter().map(|c| c.p3.coords).collect();
    let mut best: Option<(f64, RigidPose)> = None;
    for beta in candidates {
        let beta = refine_betas(&l, &rho, beta);
        let x: SVector<f64, 12> = kernel.iter().zip(beta.iter()).map(|(v, b)| v * *b).sum();
        let cc: Vec<Vector3<f64>> = (0..4).map(|j| Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2])).collect();
        let mut cam: Vec<Vector3<f64>> = alphas
            .iter()
            .map(|a| cc[0] * a[0] + cc[1] * a[1] + cc[2] * a[2] + cc[3] * a[3])
            .collect();
        if cam.iter().filter(|p| p.z < 0.0).count() * 2 > cam.len() {
            for p in &mut cam {
                *p = -*p;
            }
        }
        if !cam.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            continue;
        }
        let pose = procrustes(&model, &cam);
        let e = cost(&pose, intr, corrs);
        if e.is_finite() && best.as_ref().map_or(true, |(b, _)| e < *b) {
            best = Some((e, pose));
        }
    }
    best.map(|(_, p)| p)
}

/// Real roots of `c[0] + c[1] x + c[2] x² + c[3] x³ + c[4] x⁴`, polished by Newton steps.
fn quartic_roots(c: [f64; 5]) -> Vec<f64> {
    let lead = c[4];
    if !(lead.abs() > 1e-14 * c.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
        return Vec::new();
    }
    let mut companion = nalgebra::Matrix4::<f64>::zeros();
    for k in 0..4 {
        companion[(k, 3)] = -c[k] / lead;
    }
    for k in 1..4 {
        companion[(k, k - 1)] = 1.0;
    }
    let eval = |x: f64| {
        let f = (((c[4] * x + c[3]) * x + c[2]) * x + c[1]) * x + c[0];
        let df = ((4.0 * c[4] * x + 3.0 * c[3]) * x + 2.0 * c[2]) * x + c[1];
        (f, df)
    };
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * z.re.abs().max(1.0))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..6 {
                let (f, df) = eval(x);
                if df == 0.0 {
                    break;
                }
                x -= f / df;
            }
            x
        })
        .collect()
}

/// Grunert's three-point solutions from model points and unit viewing rays.
fn p3p(points: &[Vector3<f64>; 3], rays: &[Vector3<f64>; 3]) -> Vec<RigidPose> {
    let a2 = (points[1] - points[2]).norm_squared();
    let b2 = (points[0] - points[2]).norm_squared();
    let c2 = (points[0] - points[1]).norm_squared();
    if !(b2 > 0.0) {
        return Vec::new();
    }
    let ca = rays[1].dot(&rays[2]);
    let cb = rays[0].dot(&rays[2]);
    let cg = rays[0].dot(&rays[1]);
    let q = (a2 - c2) / b2;
    let p = (a2 + c2) / b2;
    let coeffs = [
        (1.0 + q).powi(2) - 4.0 * a2 / b2 * cg * cg,
        4.0 * (-q * (1.0 + q) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - p) * ca * cg),
        2.0 * (q * q - 1.0 + 2.0 * q * q * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca - 4.0 * p * ca * cb * cg
            + 2.0 * (b2 - a2) / b2 * cg * cg),
        4.0 * (q * (1.0 - q) * cb - (1.0 - p) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb),
        (q - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca,
    ];
    let model = points.to_vec();
    quartic_roots(coeffs)
        .into_iter()
        .filter_map(|v| {
            let den = 2.0 * (cg - v * ca);
            let u = ((q - 1.0) * v * v - 2.0 * q * cb * v + 1.0 + q) / den;
            let s2 = b2 / (1.0 + v * v - 2.0 * v * cb);
            if !(u > 0.0 && v > 0.0 && s2 > 0.0 && u.is_finite()) {
                return None;
            }
            let s1 = s2.sqrt();
            let cam = [rays[0] * s1, rays[1] * (u * s1), rays[2] * (v * s1)];
            Some(procrustes(&model, &cam))
        })
        .collect()
}

/// Four-point solve: the three-point solutions of the first three correspondences, ranked
/// by reprojection error over all four.
fn minimal_pose(corrs: &[Correspondence], intr: &CameraIntrinsics) -> Option<RigidPose> {
    let ray = |c: &Correspondence| {
        let u = normalized(intr, &c.p2);
        Vector3::new(u.x, u.y, 1.0).normalize()
    };
    let points = [corrs[0].p3.coords, corrs[1].p3.coords, corrs[2].p3.coords];
    let rays = [ray(&corrs[0]), ray(&corrs[1]), ray(&corrs[2])];
    p3p(&points, &rays)
        .into_iter()
        .map(|pose| (cost(&pose, intr, corrs), pose))
        .filter(|(e, _)| e.is_finite())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, pose)| pose)
}

/// Gauss-Newton on the control-point distance constraints.
fn refine_betas(l: &SMatrix<f64, 6, 10>, rho: &SVector<f64, 6>, mut b: Vector4<f64>) -> Vector4<f64> {
    for _ in 0..5 {
        let products = SVector::<f64, 10>::from_column_slice(&[
            b[0] * b[0],
            b[0] * b[1],
            b[1] * b[1],
            b[0] * b[2],
            b[1] * b[2],
            b[2] * b[2],
            b[0] * b[3],
            b[1] * b[3],
            b[2] * b[3],
            b[3] * b[3],
        ]);
        let mut j = SMatrix::<f64, 6, 4>::zeros();
        for r in 0..6 {
            let row = l.row(r);
            j[(r, 0)] = 2.0 * row[0] * b[0] + row[1] * b[1] + row[3] * b[2] + row[6] * b[3];
            j[(r, 1)] = row[1] * b[0] + 2.0 * row[2] * b[1] + row[4] * b[2] + row[7] * b[3];
            j[(r, 2)] = row[3] * b[0] + row[4] * b[1] + 2.0 * row[5] * b[2] + row[8] * b[3];
            j[(r, 3)] = row[6] * b[0] + row[7] * b[1] + row[8] * b[2] + 2.0 * row[9] * b[3];
        }
        let resid = rho - l * products;
        let Some(step) = j.svd(true, true).solve(&resid, 1e-12).ok() else { break };
        b += step;
    }
    b
}

/// Plane-to-image homography decomposition for coplanar model points.
fn planar(corrs: &[Correspondence], intr: &CameraIntrinsics, frame: &(Vector3<f64>, Matrix3<f64>, Vector3<f64>)) -> Option<RigidPose> {
    let (c0, axes, _) = frame;
    let n = corrs.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 9);
    for (i, c) in corrs.iter().enumerate() {
        let d = c.p3.coords - c0;
        let (x, y) = (d.dot(&axes.column(0)), d.dot(&axes.column(1)));
        let u = normalized(intr, &c.p2);
        let rows = [[x, y, 1.0, 0.0, 0.0, 0.0, -u.x * x, -u.x * y, -u.x], [0.0, 0.0, 0.0, x, y, 1.0, -u.y * x, -u.y * y, -u.y]];
        for (k, row) in rows.iter().enumerate() {
            for (col, v) in row.iter().enumerate() {
                a[(2 * i + k, col)] = *v;
            }
        }
    }
    let ata = SMatrix::<f64, 9, 9>::from_iterator((a.transpose() * &a).iter().copied());
    let eig = ata.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let h = eig.eigenvectors.column(k);
    let hm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let (h1, h2, h3) = (hm.column(0).into_owned(), hm.column(1).into_owned(), hm.column(2).into_owned());
    let mut lambda = 2.0 / (h1.norm() + h2.norm());
    if !lambda.is_finite() {
        return None;
    }
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let rp = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));
    let tp = h3 * lambda;
    // Model point p = c0 + B·(x, y, 0): camera = Rp·Bᵀ(p − c0) + tp.
    let r = rp * axes.transpose();
    Some(RigidPose::new(r, tp - r * c0))
}

/// Levenberg–Marquardt on the summed squared pinhole reprojection residuals, starting
/// from `init`. Stops when an accepted step changes the cost by less than `1e-10` or
/// after `max_iterations`.
pub(crate) fn refine_lm(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    init: RigidPose,
    max_iterations: usize,
) -> (RigidPose, Vec<f64>) {
    let n = corrs.len() as f64;
    let mut pose = init;
    let mut current = cost(&pose, intr, corrs);
    let mut trace = vec![current / n];
    let mut mu = 1e-3;
    for _ in 0..max_iterations {
        let center: Vector3<f64> = corrs.iter().map(|c| c.p3.coords).sum::<Vector3<f64>>() / n;
        let pivot = pose.pivot_for(&Point3::from(center));
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for c in corrs {
            let x = pose.apply(&c.p3).coords;
            if x.z <= 0.0 {
                continue;
            }
            let u = Point2::new(intr.fx * x.x / x.z + intr.cx, intr.fy * x.y / x.z + intr.cy);
            let r = u - c.p2;
            let jp = SMatrix::<f64, 2, 3>::new(
                intr.fx / x.z,
                0.0,
                -intr.fx * x.x / (x.z * x.z),
                0.0,
                intr.fy / x.z,
                -intr.fy * x.y / (x.z * x.z),
            );
            let mut jx = SMatrix::<f64, 3, 6>::zeros();
            jx.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&(x - pivot))));
            jx.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = jp * jx;
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let mut improved = false;
        while mu < 1e16 {
            let mut damped = h;
            for k in 0..6 {
                damped[(k, k)] += mu * h[(k, k)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&(-g))) else {
                mu *= 10.0;
                continue;
            };
            let candidate = pose.perturbed(&step, &pivot);
            let next = cost(&candidate, intr, corrs);
            if next.is_finite() && next < current {
                let change = current - next;
                pose = candidate;
                current = next;
                mu = (mu / 10.0).max(1e-12);
                improved = change >= LM_COST_TOLERANCE;
                break;
            }
            mu *= 10.0;
        }
        trace.push(current / n);
        if !improved {
            break;
        }
    }
    (pose, trace)
}

/// Pose minimizing the summed squared reprojection error of undistorted correspondences.
pub fn pnp_register(corrs: &[Correspondence], intr: &CameraIntrinsics) -> Result<RigidPose> {
    let frame = check_input(corrs)?;
    let init = initial_pose(corrs, intr, &frame)?;
    let (pose, _) = refine_lm(corrs, intr, init, LM_MAX_ITERATIONS);
    let c = cost(&pose, intr, corrs);
    if !c.is_finite() {
        return Err(Error::NoConvergence {
            iterations: LM_MAX_ITERATIONS,
            residual: c,
        });
    }
    Ok(pose)
}

fn initial_pose(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    frame: &(Vector3<f64>, Matrix3<f64>, Vector3<f64>),
) -> Result<RigidPose> {
    let sv = frame.2;
    let init = if corrs.len() == MIN_POINTS {
        minimal_pose(corrs, intr).or_else(|| epnp(corrs, intr, frame))
    } else if sv[2] <= PLANAR_TOLERANCE * sv[0] {
        planar(corrs, intr, frame)
    } else {
        epnp(corrs, intr, frame)
    };
    init.ok_or_else(|| Error::DegenerateConfiguration("no initial pose from the correspondences".into()))
}

fn inliers_of(pose: &RigidPose, intr: &CameraIntrinsics, corrs: &[Correspondence], threshold: f64) -> Vec<usize> {
    (0..corrs.len())
        .filter(|&i| reprojection_distance(pose, intr, &corrs[i]) <= threshold)
        .collect()
}

fn subset(corrs: &[Correspondence], idx: &[usize]) -> Vec<Correspondence> {
    idx.iter().map(|&i| corrs[i]).collect()
}

/// RANSAC over 4-point samples with a reprojection inlier test, then a refit on the
/// consensus set until it stops changing.
pub fn pnp_ransac_register(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    threshold: f64,
    max_iters: usize,
    seed: u64,
) -> Result<RansacOutcome> {
    if corrs.len() < MIN_POINTS {
        return Err(Error::DegenerateConfiguration(format!(
            "{} correspondences, at least {MIN_POINTS} needed",
            corrs.len()
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument("inlier threshold must be positive".into()));
    }
    let no_model = Error::NoModelFound { min_inliers: MIN_POINTS };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, RigidPose)> = None;
    let mut needed = max_iters;
    let mut k = 0;
    while k < needed.min(max_iters) {
        k += 1;
        let idx = sample(&mut rng, corrs.len(), MIN_POINTS).into_vec();
        let minimal = subset(corrs, &idx);
        let Ok(frame) = check_input(&minimal) else { continue };
        let Ok(pose) = initial_pose(&minimal, intr, &frame) else { continue };
        let inl = inliers_of(&pose, intr, corrs, threshold);
        let err: f64 = inl.iter().map(|&i| reprojection_distance(&pose, intr, &corrs[i])).sum();
        let better = match &best {
            None => true,
            Some((n, e, _)) => inl.len() > *n || (inl.len() == *n && err < *e),
        };
        if better && inl.len() >= MIN_POINTS {
            let w = inl.len() as f64 / corrs.len() as f64;
            let miss = 1.0 - w.powi(MIN_POINTS as i32);
            needed = if miss <= 0.0 {
                k
            } else {
                ((1.0f64 - 0.999).ln() / miss.ln()).ceil().max(k as f64) as usize
            };
            best = Some((inl.len(), err, pose));
        }
    }
    let (_, _, pose) = best.ok_or(no_model)?;
    let mut inliers = inliers_of(&pose, intr, corrs, threshold);
    let mut pose = pose;
    for _ in 0..RECOMPUTE_ROUNDS {
        let Ok(refit) = pnp_register(&subset(corrs, &inliers), intr) else { break };
        let next = inliers_of(&refit, intr, corrs, threshold);
        pose = refit;
        if next == inliers || next.len() < MIN_POINTS {
            break;
        }
        inliers = next;
    }
    Ok(RansacOutcome { pose, inliers })
}

/// RANSAC followed by correspondence recomputation: each landmark pixel is reassigned to
/// the nearest projected model landmark of its class and the pose is refitted on those
/// within `threshold`, until the inlier set is stable or ten rounds have run.
///
/// `groups` pairs model points with image points per landmark class. Inlier indices of
/// the result refer to image points, numbered group after group.
pub fn pnp_ransac_with_recompute(
    corrs: &[Correspondence],
    groups: &[(&[Point3], &[Point2])],
    intr: &CameraIntrinsics,
    threshold: f64,
    max_iters: usize,
    seed: u64,
) -> Result<RansacOutcome> {
    let mut outcome = pnp_ransac_register(corrs, intr, threshold, max_iters, seed)?;
    let mut previous: Option<BTreeSet<usize>> = None;
    for _ in 0..RECOMPUTE_ROUNDS {
        let mut matched = Vec::new();
        let mut inliers = BTreeSet::new();
        let mut offset = 0;
        for (model, image) in groups {
            let projected: Vec<(usize, [f64; 2])> = model
                .iter()
                .enumerate()
                .filter_map(|(i, p)| pinhole(intr, &outcome.pose.apply(p).coords).map(|u| (i, [u.x, u.y])))
                .collect();
            let tree = KdTree::new(projected.iter().map(|(_, u)| *u).collect());
            for (j, q) in image.iter().enumerate() {
                if let Some((k, d2)) = tree.nearest(&[q.x, q.y]) {
                    if d2.sqrt() <= threshold {
                        matched.push(Correspondence::new(model[projected[k].0], *q));
                        inliers.insert(offset + j);
                    }
                }
            }
            offset += image.len();
        }
        if previous.as_ref() == Some(&inliers) {
            break;
        }
        let Ok(pose) = pnp_register(&matched, intr) else { break };
        outcome = RansacOutcome {
            pose,
            inliers: inliers.iter().copied().collect(),
        };
        previous = Some(inliers);
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(1000.0, 1000.0, 960.0, 540.0, 1920, 1080)
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> RigidPose {
        let w = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        RigidPose::from_axis_angle(
            w,
            Vector3::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), rng.gen_range(350.0..700.0)),
        )
    }

    fn synth(rng: &mut ChaCha8Rng, pose: &RigidPose, n: usize, noise: f64) -> Vec<Correspondence> {
        let intr = camera();
        let normal = rand_distr_normal();
        (0..n)
            .map(|_| {
                let p = Point3::new(rng.gen_range(-80.0..80.0), rng.gen_range(-60.0..60.0), rng.gen_range(-40.0..40.0));
                let u = pinhole(&intr, &pose.apply(&p).coords).unwrap();
                let e = Vector2::new(normal(rng), normal(rng)) * noise;
                Correspondence::new(p, u + e)
            })
            .collect()
    }

    fn rand_distr_normal() -> impl Fn(&mut ChaCha8Rng) -> f64 {
        |rng| {
            // Box-Muller.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        }
    }

    #[test]
    fn recovers_noise_free_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let gt = random_pose(&mut rng);
            let corrs = synth(&mut rng, &gt, 8, 0.0);
            let p = pnp_register(&corrs, &camera()).unwrap();
            assert!(p.rotation_distance(&gt) < 1e-6);
            assert!(p.translation_distance(&gt) < 1e-3);
        }
    }

    #[test]
    fn four_points_suffice() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_pose(&mut rng);
        let corrs = synth(&mut rng, &gt, 4, 0.0);
        let p = pnp_register(&corrs, &camera()).unwrap();
        assert!(cost(&p, &camera(), &corrs) < 1e-12);
    }

    #[test]
    fn three_point_solutions_contain_the_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let intr = camera();
        for _ in 0..100 {
            let gt = random_pose(&mut rng);
            let corrs = synth(&mut rng, &gt, 4, 0.0);
            let points = [corrs[0].p3.coords, corrs[1].p3.coords, corrs[2].p3.coords];
            let rays = points.map(|p| gt.apply(&Point3::from(p)).coords.normalize());
            let found = p3p(&points, &rays)
                .iter()
                .any(|p| p.rotation_distance(&gt) < 1e-6 && p.translation_distance(&gt) < 1e-4);
            assert!(found);
            let m = minimal_pose(&corrs, &intr).unwrap();
            assert!(m.rotation_distance(&gt) < 1e-6 && m.translation_distance(&gt) < 1e-4);
        }
    }

    #[test]
    fn minimal_solve_moves_with_the_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let intr = camera();
        let q = RigidPose::from_axis_angle(Vector3::new(0.3, 1.2, -0.4), Vector3::new(10.0, -40.0, 25.0));
        for _ in 0..50 {
            let gt = random_pose(&mut rng);
            let corrs = synth(&mut rng, &gt, 4, 2.0);
            let moved: Vec<Correspondence> = corrs.iter().map(|c| Correspondence::new(q.apply(&c.p3), c.p2)).collect();
            let (Some(a), Some(b)) = (minimal_pose(&corrs, &intr), minimal_pose(&moved, &intr)) else {
                continue;
            };
            let d = b.rotation_distance(&a.compose(&q.inverse()));
            assert!(d < 1e-6, "{d:e}");
        }
    }

    #[test]
    fn coplanar_points_use_the_homography() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = random_pose(&mut rng);
        let intr = camera();
        let corrs: Vec<Correspondence> = (0..10)
            .map(|_| {
                let p = Point3::new(rng.gen_range(-80.0..80.0), rng.gen_range(-60.0..60.0), 5.0);
                Correspondence::new(p, pinhole(&intr, &gt.apply(&p).coords).unwrap())
            })
            .collect();
        let p = pnp_register(&corrs, &intr).unwrap();
        assert!(p.rotation_distance(&gt) < 1e-6);
        assert!(p.translation_distance(&gt) < 1e-3);
    }

    #[test]
    fn degenerate_inputs() {
        let intr = camera();
        let c = |x: f64| Correspondence::new(Point3::new(x, 2.0 * x, 0.0), Point2::new(x, x));
        assert!(matches!(pnp_register(&[c(0.0), c(1.0), c(2.0)], &intr), Err(Error::DegenerateConfiguration(_))));
        assert!(matches!(
            pnp_register(&[c(0.0), c(1.0), c(2.0), c(3.0), c(4.0)], &intr),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn noisy_fit_has_small_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let gt = random_pose(&mut rng);
            let corrs = synth(&mut rng, &gt, 20, 1.0);
            let p = pnp_register(&corrs, &camera()).unwrap();
            let rmse = (cost(&p, &camera(), &corrs) / 20.0).sqrt();
            assert!(rmse <= 2.0, "{rmse}");
        }
    }

    #[test]
    fn ransac_rejects_planted_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = random_pose(&mut rng);
        let mut corrs = synth(&mut rng, &gt, 20, 0.0);
        for _ in 0..10 {
            let p = Point3::new(rng.gen_range(-80.0..80.0), rng.gen_range(-60.0..60.0), rng.gen_range(-40.0..40.0));
            corrs.push(Correspondence::new(p, Point2::new(rng.gen_range(0.0..1920.0), rng.gen_range(0.0..1080.0))));
        }
        let out = pnp_ransac_register(&corrs, &camera(), 3.0, 1000, 1).unwrap();
        assert!(out.pose.rotation_distance(&gt) < 0.5f64.to_radians());
        assert!((0..20).all(|i| out.inliers.contains(&i)));
    }

    #[test]
    fn ransac_on_clean_data_matches_the_full_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt = random_pose(&mut rng);
        let corrs = synth(&mut rng, &gt, 12, 0.0);
        let full = pnp_register(&corrs, &camera()).unwrap();
        let r = pnp_ransac_register(&corrs, &camera(), 3.0, 200, 0).unwrap();
        assert_eq!(r.inliers.len(), 12);
        assert!(r.pose.rotation_distance(&full) < 1e-6);
        assert!(r.pose.translation_distance(&full) < 1e-6);
    }

    #[test]
    fn all_outliers_find_no_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let corrs: Vec<Correspondence> = (0..30)
            .map(|_| {
                Correspondence::new(
                    Point3::new(rng.gen_range(-80.0..80.0), rng.gen_range(-60.0..60.0), rng.gen_range(-40.0..40.0)),
                    Point2::new(rng.gen_range(0.0..1920.0), rng.gen_range(0.0..1080.0)),
                )
            })
            .collect();
        let r = pnp_ransac_register(&corrs, &camera(), 0.01, 200, 0);
        assert!(matches!(r, Err(Error::NoModelFound { .. })), "{r:?}");
    }

    #[test]
    fn recompute_rounds_keep_a_correct_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = random_pose(&mut rng);
        let intr = camera();
        let corrs = synth(&mut rng, &gt, 15, 0.0);
        let model: Vec<Point3> = corrs.iter().map(|c| c.p3).collect();
        let image: Vec<Point2> = corrs.iter().map(|c| c.p2).collect();
        let out = pnp_ransac_with_recompute(&corrs[..8], &[(&model, &image)], &intr, 3.0, 100, 0).unwrap();
        assert_eq!(out.inliers.len(), 15);
        assert!(out.pose.rotation_distance(&gt) < 1e-6);
    }
}
