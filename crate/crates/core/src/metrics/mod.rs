//! Landmark detection and registration evaluation metrics.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Point2, Point3, RigidPose};
use crate::meshproc::{LabelledMesh, LandmarkClass, LandmarkSet3D};
use crate::pixels::{distance_transform, PixelMask};
use crate::render::{visible_vertices, Channel, LandmarkMap2D};
use crate::spatial::KdTree;

/// Default distance tolerance of the symmetric distance score (pixels).
pub const DEFAULT_D_MAX: f64 = 5.0;

/// A metric value or one of the table sentinels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Value(f64),
    /// Ground truth absent for the class.
    Na,
    /// Prediction or registration failed for the class.
    Fail,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Value(v) => write!(f, "{v:.6}"),
            Score::Na => f.write_str("NA"),
            Score::Fail => f.write_str("F"),
        }
    }
}

fn check_domain(a: &PixelMask, b: &PixelMask) -> Result<()> {
    if a.same_domain(b) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "pixel sets over different domains: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )))
    }
}

/// Fraction of predicted pixels within `tolerance` of a ground-truth pixel.
/// `Na` for an empty prediction.
pub fn precision(pred: &PixelMask, gt: &PixelMask, tolerance: f64) -> Result<Score> {
    check_domain(pred, gt)?;
    let n = pred.count();
    if n == 0 {
        return Ok(Score::Na);
    }
    let hits = if tolerance <= 0.0 {
        pred.and(gt).count()
    } else if !gt.any() {
        0
    } else {
        let df = distance_transform(gt);
        let t2 = tolerance * tolerance;
        pred.pixels().iter().filter(|&&(x, y)| df.dist2(x, y) <= t2).count()
    };
    Ok(Score::Value(hits as f64 / n as f64))
}

/// Dice coefficient `2|B∩C| / (|B| + |C|)`; `Na` when both are empty.
pub fn dsc(pred: &PixelMask, gt: &PixelMask) -> Result<Score> {
    check_domain(pred, gt)?;
    let total = pred.count() + gt.count();
    if total == 0 {
        return Ok(Score::Na);
    }
    Ok(Score::Value(2.0 * pred.and(gt).count() as f64 / total as f64))
}

/// Symmetric distance score combining a proximity term, a spurious-prediction term and
/// a miss term. `domain_size` is the pixel count of the image. `Na` when `gt` is empty.
pub fn symmetric_distance_score(pred: &PixelMask, gt: &PixelMask, d_max: f64, domain_size: usize) -> Result<Score> {
    check_domain(pred, gt)?;
    if !(d_max > 0.0) {
        return Err(Error::InvalidArgument(format!("d_max must be positive, got {d_max}")));
    }
    let n_gt = gt.count();
    if n_gt == 0 {
        return Ok(Score::Na);
    }
    let spread = 2.0 * n_gt as f64 * d_max;
    let denom = domain_size as f64 - spread;
    if !(denom > 0.0) {
        return Err(Error::NonPositiveDenominator(denom));
    }
    let r2 = d_max * d_max;
    let to_gt = distance_transform(gt);
    let tolerance = PixelMask::from_fn(gt.width(), gt.height(), |x, y| to_gt.dist2(x, y) <= r2);
    let kept_pred = pred.and(&tolerance);
    let false_pos = pred.count() - kept_pred.count();
    let to_pred = distance_transform(pred);
    let found = PixelMask::from_fn(gt.width(), gt.height(), |x, y| gt.get(x, y) && to_pred.dist2(x, y) <= r2);
    let false_neg = n_gt - found.count();
    let mut proximity = 0.0;
    if kept_pred.any() && found.any() {
        let to_found = distance_transform(&found);
        let to_kept = distance_transform(&kept_pred);
        proximity += kept_pred.pixels().iter().map(|&(x, y)| to_found.dist(x, y)).sum::<f64>();
        proximity += found.pixels().iter().map(|&(x, y)| to_kept.dist(x, y)).sum::<f64>();
    }
    Ok(Score::Value(
        proximity / spread + false_pos as f64 / denom + false_neg as f64 / n_gt as f64,
    ))
}

/// Sum of the two directed mean squared nearest-neighbour distances (mm²).
pub fn chamfer3d(pred: &[Point3], gt: &[Point3]) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptySet);
    }
    let directed = |from: &[Point3], to: &[Point3]| {
        let tree = KdTree::new(to.iter().map(|p| [p.x, p.y, p.z]).collect());
        from.iter()
            .map(|p| tree.nearest(&[p.x, p.y, p.z]).expect("non-empty").1)
            .sum::<f64>()
            / from.len() as f64
    };
    Ok(directed(pred, gt) + directed(gt, pred))
}

/// Per-class 3D Chamfer distances and their mean over the computable classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric3DReport {
    pub ridge: Score,
    pub ligament: Score,
    pub mean: Score,
}

pub fn mean_chamfer(pred: &LandmarkSet3D, gt: &LandmarkSet3D, mesh: &LabelledMesh) -> Result<Metric3DReport> {
    pred.validate(mesh.vertex_count())?;
    gt.validate(mesh.vertex_count())?;
    let class_score = |c: LandmarkClass| {
        let points = |set: &LandmarkSet3D| -> Vec<Point3> { set.class(c).iter().map(|&v| mesh.vertices[v]).collect() };
        let (p, g) = (points(pred), points(gt));
        match chamfer3d(&p, &g) {
            Ok(v) => Score::Value(v),
            Err(_) => Score::Fail,
        }
    };
    let ridge = class_score(LandmarkClass::Ridge);
    let ligament = class_score(LandmarkClass::Ligament);
    let values: Vec<f64> = [ridge, ligament].iter().filter_map(|s| s.value()).collect();
    let mean = if values.is_empty() {
        Score::Fail
    } else {
        Score::Value(values.iter().sum::<f64>() / values.len() as f64)
    };
    Ok(Metric3DReport { ridge, ligament, mean })
}

/// Hausdorff distance between two pixel sets (Euclidean, pixels).
pub fn hausdorff2d(a: &PixelMask, b: &PixelMask) -> Result<f64> {
    check_domain(a, b)?;
    if !a.any() || !b.any() {
        return Err(Error::EmptySet);
    }
    let directed = |from: &PixelMask, to: &PixelMask| {
        let df = distance_transform(to);
        from.pixels().iter().map(|&(x, y)| df.dist2(x, y)).fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)).sqrt())
}

/// Mean of the two directed mean nearest-neighbour distances between point sets.
pub fn symmetric_mean_distance(a: &[Point2], b: &[Point2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let directed = |from: &[Point2], to: &[Point2]| {
        let tree = KdTree::new(to.iter().map(|p| [p.x, p.y]).collect());
        from.iter()
            .map(|p| tree.nearest(&[p.x, p.y]).expect("non-empty").1.sqrt())
            .sum::<f64>()
            / from.len() as f64
    };
    Ok(0.5 * (directed(a, b) + directed(b, a)))
}

/// Registration quality against 2D ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationReport {
    pub ridge: Score,
    pub ligament: Score,
    pub hausdorff: Score,
}

impl RegistrationReport {
    /// Mean of the class reprojection errors that could be computed.
    pub fn combined(&self) -> Option<f64> {
        let v: Vec<f64> = [self.ridge, self.ligament].iter().filter_map(|s| s.value()).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn failed(&self) -> bool {
        self.ridge == Score::Fail && self.ligament == Score::Fail
    }
}

fn pixel_centers(mask: &PixelMask) -> Vec<Point2> {
    mask.pixels()
        .into_iter()
        .map(|(x, y)| Point2::new(x as f64 + 0.5, y as f64 + 0.5))
        .collect()
}

/// Projects the visible ground-truth landmark vertices under `pose` and compares them
/// with the ground-truth landmark pixels, per class.
pub fn reprojection_error(
    pose: &RigidPose,
    gt3d: &LandmarkSet3D,
    mesh: &LabelledMesh,
    gt2d: &LandmarkMap2D,
    intr: &CameraIntrinsics,
) -> Result<RegistrationReport> {
    gt3d.validate(mesh.vertex_count())?;
    if !gt2d.matches_camera(intr) {
        return Err(Error::InvalidArgument(format!(
            "label map is {}x{} but the camera is {}x{}",
            gt2d.width(),
            gt2d.height(),
            intr.width,
            intr.height
        )));
    }
    let visible = visible_vertices(mesh, pose, intr);
    let mut projected_all = PixelMask::new(gt2d.width(), gt2d.height());
    let mut gt_all = PixelMask::new(gt2d.width(), gt2d.height());
    let mut score = |class: LandmarkClass| {
        let gt_pixels = gt2d.channel(class.into());
        gt_all = gt_all.or(&gt_pixels);
        let projected: Vec<Point2> = gt3d
            .class(class)
            .iter()
            .filter(|v| visible.contains(v))
            .filter_map(|&v| crate::geometry::project(intr, pose, &mesh.vertices[v]).ok())
            .collect();
        for p in projected.iter().filter(|p| intr.contains(p)) {
            projected_all.set(p.x as usize, p.y as usize, true);
        }
        match symmetric_mean_distance(&projected, &pixel_centers(&gt_pixels)) {
            Ok(v) => Score::Value(v),
            Err(_) => Score::Fail,
        }
    };
    let ridge = score(LandmarkClass::Ridge);
    let ligament = score(LandmarkClass::Ligament);
    let hausdorff = match hausdorff2d(&projected_all, &gt_all) {
        Ok(v) => Score::Value(v),
        Err(_) => Score::Fail,
    };
    Ok(RegistrationReport {
        ridge,
        ligament,
        hausdorff,
    })
}

/// Per-class precision, Dice and symmetric distance score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: Score,
    pub dsc: Score,
    pub symmetric: Score,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric2DReport {
    pub ridge: ClassScores,
    pub ligament: ClassScores,
    pub silhouette: ClassScores,
}

impl Metric2DReport {
    pub fn class(&self, c: Channel) -> &ClassScores {
        match c {
            Channel::Ridge => &self.ridge,
            Channel::Ligament => &self.ligament,
            Channel::Silhouette => &self.silhouette,
        }
    }
}

/// Evaluates a predicted label map against ground truth. Classes absent from the
/// ground truth report `Na` throughout.
pub fn evaluate_2d(pred: &LandmarkMap2D, gt: &LandmarkMap2D, tolerance: f64, d_max: f64) -> Result<Metric2DReport> {
    let domain = gt.width() * gt.height();
    let class = |c: Channel| -> Result<ClassScores> {
        let g = gt.channel(c);
        let p = pred.channel(c);
        check_domain(&p, &g)?;
        if !g.any() {
            return Ok(ClassScores {
                precision: Score::Na,
                dsc: Score::Na,
                symmetric: Score::Na,
            });
        }
        Ok(ClassScores {
            precision: match precision(&p, &g, tolerance)? {
                // An empty prediction against present ground truth scores zero.
                Score::Na => Score::Value(0.0),
                s => s,
            },
            dsc: dsc(&p, &g)?,
            symmetric: symmetric_distance_score(&p, &g, d_max, domain)?,
        })
    };
    Ok(Metric2DReport {
        ridge: class(Channel::Ridge)?,
        ligament: class(Channel::Ligament)?,
        silhouette: class(Channel::Silhouette)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(w: usize, h: usize, row: usize, x0: usize, x1: usize) -> PixelMask {
        PixelMask::from_fn(w, h, |x, y| y == row && (x0..x1).contains(&x))
    }

    #[test]
    fn precision_examples() {
        let gt = PixelMask::from_fn(10, 10, |x, y| y == 0 && x < 6);
        let pred = PixelMask::from_fn(10, 10, |_, y| y == 0);
        assert_eq!(precision(&pred, &gt, 0.0).unwrap(), Score::Value(0.6));
        assert_eq!(precision(&gt, &gt, 0.0).unwrap(), Score::Value(1.0));
        assert_eq!(precision(&PixelMask::new(10, 10), &gt, 0.0).unwrap(), Score::Na);
        // With a one-pixel tolerance the next pixel along the row also counts.
        assert_eq!(precision(&pred, &gt, 1.0).unwrap(), Score::Value(0.7));
    }

    #[test]
    fn dice_examples() {
        let b = PixelMask::from_fn(20, 1, |x, _| x < 10);
        let c = PixelMask::from_fn(20, 1, |x, _| (4..14).contains(&x));
        assert_eq!(dsc(&b, &c).unwrap(), Score::Value(0.6));
        assert_eq!(dsc(&b, &b).unwrap(), Score::Value(1.0));
        let d = PixelMask::from_fn(20, 1, |x, _| x >= 15);
        assert_eq!(dsc(&b, &d).unwrap(), Score::Value(0.0));
        assert_eq!(dsc(&PixelMask::new(3, 3), &PixelMask::new(3, 3)).unwrap(), Score::Na);
    }

    #[test]
    fn symmetric_score_edge_values() {
        let gt = line(100, 100, 50, 10, 90);
        assert_eq!(symmetric_distance_score(&gt, &gt, 5.0, 10_000).unwrap(), Score::Value(0.0));
        assert_eq!(
            symmetric_distance_score(&PixelMask::new(100, 100), &gt, 5.0, 10_000).unwrap(),
            Score::Value(1.0)
        );
        for d in 1..=5 {
            let pred = line(100, 100, 50 + d, 10, 90);
            let g = symmetric_distance_score(&pred, &gt, 5.0, 10_000).unwrap().value().unwrap();
            assert!((g - d as f64 / 5.0).abs() < 1e-12, "shift {d}: {g}");
        }
        assert_eq!(
            symmetric_distance_score(&gt, &PixelMask::new(100, 100), 5.0, 10_000).unwrap(),
            Score::Na
        );
        assert!(matches!(
            symmetric_distance_score(&gt, &gt, 5.0, 800),
            Err(Error::NonPositiveDenominator(_))
        ));
    }

    #[test]
    fn spurious_pixel_raises_the_score() {
        let gt = line(100, 100, 50, 10, 90);
        let mut pred = gt.clone();
        let base = symmetric_distance_score(&pred, &gt, 5.0, 10_000).unwrap().value().unwrap();
        pred.set(5, 5, true);
        let more = symmetric_distance_score(&pred, &gt, 5.0, 10_000).unwrap().value().unwrap();
        assert!(more > base);
    }

    #[test]
    fn chamfer_examples() {
        let a = [Point3::new(0.0, 0.0, 0.0)];
        let b = [Point3::new(3.0, 0.0, 0.0)];
        assert_eq!(chamfer3d(&a, &b).unwrap(), 18.0);
        assert_eq!(chamfer3d(&a, &a).unwrap(), 0.0);
        assert!(matches!(chamfer3d(&a, &[]), Err(Error::EmptySet)));
    }

    #[test]
    fn hausdorff_examples() {
        let a = PixelMask::from_pixels(10, 10, [(0, 0)]);
        let b = PixelMask::from_pixels(10, 10, [(3, 4)]);
        assert_eq!(hausdorff2d(&a, &b).unwrap(), 5.0);
        assert_eq!(hausdorff2d(&a, &a).unwrap(), 0.0);
        let big = PixelMask::from_pixels(10, 10, [(0, 0), (6, 8)]);
        assert_eq!(hausdorff2d(&a, &big).unwrap(), 10.0);
        assert!(matches!(hausdorff2d(&a, &PixelMask::new(10, 10)), Err(Error::EmptySet)));
    }

    #[test]
    fn mean_chamfer_by_hand() {
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(3.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 3.0, 0.0),
        ];
        let mesh = LabelledMesh::new(v, vec![]).unwrap();
        let gt = LandmarkSet3D::new([0], [2]);
        let pred = LandmarkSet3D::new([1], [3]);
        let r = mean_chamfer(&pred, &gt, &mesh).unwrap();
        assert_eq!(r.ridge, Score::Value(18.0));
        assert_eq!(r.ligament, Score::Value(8.0));
        assert_eq!(r.mean, Score::Value(13.0));
        let r = mean_chamfer(&LandmarkSet3D::new([1], []), &gt, &mesh).unwrap();
        assert_eq!(r.ligament, Score::Fail);
        assert_eq!(r.mean, Score::Value(18.0));
        let same = mean_chamfer(&gt, &gt, &mesh).unwrap();
        assert_eq!((same.ridge, same.ligament), (Score::Value(0.0), Score::Value(0.0)));
    }

    #[test]
    fn sentinels_print_as_table_markers() {
        assert_eq!(Score::Na.to_string(), "NA");
        assert_eq!(Score::Fail.to_string(), "F");
    }

    fn brute_directed_max(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
        a.iter()
            .map(|p| {
                b.iter()
                    .map(|q| ((p.0 as f64 - q.0 as f64).powi(2) + (p.1 as f64 - q.1 as f64).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    proptest! {
        #[test]
        fn hausdorff_matches_brute_force(
            a in proptest::collection::vec((0usize..30, 0usize..20), 1..40),
            b in proptest::collection::vec((0usize..30, 0usize..20), 1..40),
        ) {
            let ma = PixelMask::from_pixels(30, 20, a.iter().copied());
            let mb = PixelMask::from_pixels(30, 20, b.iter().copied());
            let expect = brute_directed_max(&ma.pixels(), &mb.pixels()).max(brute_directed_max(&mb.pixels(), &ma.pixels()));
            prop_assert!((hausdorff2d(&ma, &mb).unwrap() - expect).abs() < 1e-9);
            prop_assert_eq!(hausdorff2d(&ma, &mb).unwrap(), hausdorff2d(&mb, &ma).unwrap());
        }
    }
}
