//! Point correspondences between a 3D landmark curve and its 2D annotation, for the
//! PnP solvers.

use nalgebra::{DMatrix, SVector};

use crate::geometry::{Point2, Point3};
use crate::register::Correspondence;

/// Sorts points by their coordinate along the principal axis of the set.
pub fn order_along_principal_axis<const D: usize>(points: &[SVector<f64, D>]) -> Vec<SVector<f64, D>> {
    if points.len() < 2 {
        return points.to_vec();
    }
    let n = points.len() as f64;
    let c: SVector<f64, D> = points.iter().sum::<SVector<f64, D>>() / n;
    let mut cov = DMatrix::<f64>::zeros(D, D);
    for p in points {
        let d = p - c;
        for i in 0..D {
            for j in 0..D {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    let eig = cov.symmetric_eigen();
    let axis = SVector::<f64, D>::from_iterator(eig.eigenvectors.column(eig.eigenvalues.imax()).iter().copied());
    // Orient toward the heavier tail so the order moves with the set under rigid motions;
    // symmetric sets fall back to a coordinate rule.
    let skew: f64 = points.iter().map(|p| (p - c).dot(&axis).powi(3)).sum();
    let spread: f64 = points.iter().map(|p| (p - c).dot(&axis).abs().powi(3)).sum();
    let flip = if skew.abs() > 1e-9 * spread {
        skew < 0.0
    } else {
        axis[axis.iamax()] < 0.0
    };
    let axis = if flip { -axis } else { axis };
    let mut keyed: Vec<(f64, SVector<f64, D>)> = points.iter().map(|p| ((p - c).dot(&axis), *p)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, p)| p).collect()
}

fn resample<const D: usize>(sorted: &[SVector<f64, D>], k: usize) -> Vec<SVector<f64, D>> {
    if k == 1 {
        return vec![sorted[sorted.len() / 2]];
    }
    (0..k)
        .map(|i| sorted[(i * (sorted.len() - 1) + (k - 1) / 2) / (k - 1)])
        .collect()
}

/// Pairs `samples` evenly spaced members of two curves, each ordered along its own
/// principal axis; `reversed` flips the 2D order.
pub fn curve_correspondences(model: &[Point3], image: &[Point2], samples: usize, reversed: bool) -> Vec<Correspondence> {
    if model.is_empty() || image.is_empty() || samples == 0 {
        return Vec::new();
    }
    let m = order_along_principal_axis(&model.iter().map(|p| p.coords).collect::<Vec<_>>());
    let i = order_along_principal_axis(&image.iter().map(|p| p.coords).collect::<Vec<_>>());
    let k = samples.min(m.len()).min(i.len());
    let m = resample(&m, k);
    let mut i = resample(&i, k);
    if reversed {
        i.reverse();
    }
    m.into_iter()
        .zip(i)
        .map(|(p, q)| Correspondence::new(Point3::from(p), Point2::from(q)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3};

    #[test]
    fn orders_a_shuffled_line() {
        let pts: Vec<Vector2<f64>> = [3.0, -1.0, 7.0, 0.0, 2.0].iter().map(|&t| Vector2::new(t, 0.5 * t)).collect();
        let sorted = order_along_principal_axis(&pts);
        assert!(sorted.windows(2).all(|w| w[0].x < w[1].x));
    }

    #[test]
    fn pairs_matching_ends() {
        let model: Vec<Point3> = (0..20).map(|i| Point3::new(i as f64, 0.0, 1.0)).collect();
        let image: Vec<Point2> = (0..50).map(|i| Point2::new(2.0 * i as f64, 3.0)).collect();
        let c = curve_correspondences(&model, &image, 5, false);
        assert_eq!(c.len(), 5);
        assert_eq!(c[0].p3.x, 0.0);
        assert_eq!(c[0].p2.x, 0.0);
        assert_eq!(c[4].p3.x, 19.0);
        assert_eq!(c[4].p2.x, 98.0);
        let r = curve_correspondences(&model, &image, 5, true);
        assert_eq!(r[0].p2.x, 98.0);
    }

    #[test]
    fn order_follows_a_rigid_motion() {
        let pts: Vec<Vector3<f64>> = (0..15)
            .map(|i| {
                let t = f64::from(i);
                Vector3::new(t * t * 0.3, t, 0.1 * t.sin())
            })
            .collect();
        let q = crate::geometry::RigidPose::from_axis_angle(Vector3::new(2.0, -1.0, 0.5), Vector3::new(4.0, 5.0, 6.0));
        let moved: Vec<Vector3<f64>> = pts.iter().map(|p| q.apply(&Point3::from(*p)).coords).collect();
        let a = order_along_principal_axis(&pts);
        let b = order_along_principal_axis(&moved);
        for (x, y) in a.iter().zip(&b) {
            assert!((q.apply(&Point3::from(*x)).coords - y).norm() < 1e-9);
        }
    }
}
