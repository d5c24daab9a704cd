use std::collections::{BTreeSet, HashMap};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::meshproc::{LabelledMesh, LandmarkClass, LandmarkSet3D};
use crate::spatial::KdTree;

/// Default 3D dilation radius (mm) and pass count.
pub const DEFAULT_DILATION_RADIUS_MM: f64 = 20.0;
pub const DEFAULT_DILATION_PASSES: usize = 2;

/// Per-axis centering and range scaling: `(x − mean) / (max − min)`.
pub fn normalize_vertices(mesh: &LabelledMesh) -> Result<LabelledMesh> {
    if mesh.vertices.is_empty() {
        return Err(Error::InvalidArgument("empty mesh".into()));
    }
    let n = mesh.vertices.len() as f64;
    let mut mean = Vector3::zeros();
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in &mesh.vertices {
        mean += p.coords;
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    mean /= n;
    let range = hi - lo;
    for axis in 0..3 {
        if !(range[axis] > 0.0) {
            return Err(Error::DegenerateExtent { axis });
        }
    }
    let mut out = mesh.clone();
    for p in &mut out.vertices {
        for axis in 0..3 {
            p[axis] = (p[axis] - mean[axis]) / range[axis];
        }
    }
    Ok(out)
}

/// Grows the `class` label to every vertex within `radius` (Euclidean, mm) of a labelled
/// vertex. Each pass uses the labels present at its start.
pub fn dilate_labels_3d(
    mesh: &LabelledMesh,
    class: LandmarkClass,
    radius: f64,
    passes: usize,
) -> Result<LabelledMesh> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("dilation radius must be positive, got {radius}")));
    }
    if passes == 0 {
        return Err(Error::InvalidArgument("dilation needs at least one pass".into()));
    }
    let tree = KdTree::new(mesh.vertices.iter().map(|p| [p.x, p.y, p.z]).collect());
    let mut out = mesh.clone();
    let mut hits = Vec::new();
    for _ in 0..passes {
        let current: Vec<usize> = out.labels.class(class).iter().copied().collect();
        let mut added = BTreeSet::new();
        for i in current {
            let p = &mesh.vertices[i];
            hits.clear();
            tree.within(&[p.x, p.y, p.z], radius, &mut hits);
            added.extend(hits.iter().copied());
        }
        let labels = out.labels.class_mut(class);
        let before = labels.len();
        labels.extend(added);
        if labels.len() == before {
            break;
        }
    }
    Ok(out)
}

/// Class-wise union of per-view landmark sets.
pub fn merge_view_landmarks(per_view: &[LandmarkSet3D], vertex_count: usize) -> Result<LandmarkSet3D> {
    let mut merged = LandmarkSet3D::default();
    for view in per_view {
        view.validate(vertex_count)?;
        merged.ridge.extend(view.ridge.iter().copied());
        merged.ligament.extend(view.ligament.iter().copied());
    }
    Ok(merged)
}

/// Vertices touching an edge used by exactly one face.
pub fn boundary_vertices(mesh: &LabelledMesh) -> Vec<bool> {
    let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            *counts.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let mut boundary = vec![false; mesh.vertices.len()];
    for ((a, b), c) in counts {
        if c == 1 {
            boundary[a] = true;
            boundary[b] = true;
        }
    }
    boundary
}

/// Mean over interior vertices of `‖v − mean(one-ring(v))‖²` (uniform Laplacian).
///
/// Vertices on open boundaries are skipped; isolated vertices contribute zero.
pub fn laplacian_smoothness(mesh: &LabelledMesh) -> f64 {
    let rings = mesh.neighbours();
    let boundary = boundary_vertices(mesh);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, ring) in rings.iter().enumerate() {
        if boundary[i] {
            continue;
        }
        count += 1;
        if ring.is_empty() {
            continue;
        }
        let mean: Vector3<f64> =
            ring.iter().map(|&j| mesh.vertices[j].coords).sum::<Vector3<f64>>() / ring.len() as f64;
        sum += (mesh.vertices[i].coords - mean).norm_squared();
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean over edges of `(len(e) − len_ref(e))²`.
pub fn edge_length_penalty(mesh: &LabelledMesh, reference: &LabelledMesh) -> Result<f64> {
    if mesh.vertices.len() != reference.vertices.len() {
        return Err(Error::ConnectivityMismatch);
    }
    let edges = mesh.edges();
    if edges != reference.edges() {
        return Err(Error::ConnectivityMismatch);
    }
    if edges.is_empty() {
        return Ok(0.0);
    }
    let len = |v: &[Point3], (a, b): (usize, usize)| (v[a] - v[b]).norm();
    let sum: f64 = edges
        .iter()
        .map(|&e| {
            let d = len(&mesh.vertices, e) - len(&reference.vertices, e);
            d * d
        })
        .sum();
    Ok(sum / edges.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidPose;

    fn tetra() -> LabelledMesh {
        LabelledMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    fn grid(n: usize, spacing: f64) -> LabelledMesh {
        let mut v = Vec::new();
        for j in 0..n {
            for i in 0..n {
                v.push(Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
            }
        }
        let mut f = Vec::new();
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let a = j * n + i;
                f.push([a, a + 1, a + n + 1]);
                f.push([a, a + n + 1, a + n]);
            }
        }
        LabelledMesh::new(v, f).unwrap()
    }

    fn chain(spacing: f64, count: usize) -> LabelledMesh {
        let v = (0..count).map(|i| Point3::new(i as f64 * spacing, 0.0, 0.0)).collect();
        LabelledMesh::new(v, vec![]).unwrap()
    }

    #[test]
    fn unit_cube_normalizes_to_centered_unit_extent() {
        let mut v = Vec::new();
        for k in 0..8 {
            v.push(Point3::new((k & 1) as f64, ((k >> 1) & 1) as f64, ((k >> 2) & 1) as f64));
        }
        let m = normalize_vertices(&LabelledMesh::new(v, vec![]).unwrap()).unwrap();
        for p in &m.vertices {
            for a in 0..3 {
                assert!(p[a] == 0.5 || p[a] == -0.5);
            }
        }
        assert!(m.centroid().coords.norm() < 1e-15);
    }

    #[test]
    fn normalized_pair_is_a_fixed_point() {
        let v = vec![Point3::new(-0.5, -0.5, -0.5), Point3::new(0.5, 0.5, 0.5)];
        let m = LabelledMesh::new(v, vec![]).unwrap();
        assert_eq!(normalize_vertices(&m).unwrap(), m);
    }

    #[test]
    fn planar_mesh_has_degenerate_extent() {
        assert!(matches!(
            normalize_vertices(&grid(3, 1.0)),
            Err(Error::DegenerateExtent { axis: 2 })
        ));
    }

    #[test]
    fn dilation_within_and_beyond_reach() {
        let m = chain(10.0, 2)
            .with_labels(LandmarkSet3D::new([0], []))
            .unwrap();
        let d = dilate_labels_3d(&m, LandmarkClass::Ridge, 20.0, 1).unwrap();
        assert_eq!(d.labels.ridge, BTreeSet::from([0, 1]));

        let far = chain(50.0, 2).with_labels(LandmarkSet3D::new([0], [])).unwrap();
        let d = dilate_labels_3d(&far, LandmarkClass::Ridge, 20.0, 2).unwrap();
        assert_eq!(d.labels.ridge, BTreeSet::from([0]));
    }

    #[test]
    fn chain_dilation_matches_pass_simulation() {
        let m = chain(15.0, 6).with_labels(LandmarkSet3D::new([0], [])).unwrap();
        let d = dilate_labels_3d(&m, LandmarkClass::Ridge, 20.0, 2).unwrap();
        // Brute-force synchronous passes.
        let mut set = BTreeSet::from([0usize]);
        for _ in 0..2 {
            let snapshot = set.clone();
            for i in 0..m.vertices.len() {
                if snapshot.iter().any(|&j| (m.vertices[i] - m.vertices[j]).norm() <= 20.0) {
                    set.insert(i);
                }
            }
        }
        assert_eq!(set, BTreeSet::from([0, 1, 2]));
        assert_eq!(d.labels.ridge, set);
        assert!(d.labels.ligament.is_empty());
    }

    #[test]
    fn merge_views() {
        let a = LandmarkSet3D::new([1, 2], [4]);
        let b = LandmarkSet3D::new([2, 3], []);
        let m = merge_view_landmarks(&[a.clone(), b], 10).unwrap();
        assert_eq!(m.ridge, BTreeSet::from([1, 2, 3]));
        assert_eq!(m.ligament, BTreeSet::from([4]));
        assert_eq!(merge_view_landmarks(&[a.clone()], 10).unwrap(), a);
        assert!(merge_view_landmarks(&[], 10).unwrap().is_empty());
        assert!(matches!(
            merge_view_landmarks(&[LandmarkSet3D::new([10], [])], 10),
            Err(Error::IndexMismatch { .. })
        ));
    }

    #[test]
    fn planar_grid_interior_is_smooth() {
        assert!(laplacian_smoothness(&grid(6, 2.0)) < 1e-12);
    }

    #[test]
    fn tetrahedron_laplacian_by_hand() {
        // Vertex 0 ring mean = (1/3, 1/3, 1/3) → 1/3; vertex 1: (-1, 1/3, 1/3) → 11/9; same for 2, 3.
        let expect = (1.0 / 3.0 + 3.0 * 11.0 / 9.0) / 4.0;
        assert!((laplacian_smoothness(&tetra()) - expect).abs() < 1e-12);
    }

    #[test]
    fn regularizers_are_rigid_invariant() {
        let m = tetra();
        let pose = RigidPose::from_axis_angle(Vector3::new(0.4, -0.2, 1.3), Vector3::new(10.0, 3.0, -7.0));
        let moved = m.transformed(&pose);
        assert!((laplacian_smoothness(&moved) - laplacian_smoothness(&m)).abs() < 1e-9);
        assert!(edge_length_penalty(&moved, &m).unwrap() < 1e-9);
        assert_eq!(edge_length_penalty(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn doubling_unit_edges_costs_one() {
        let tri = LabelledMesh::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.5, 0.75f64.sqrt(), 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let mut scaled = tri.clone();
        for p in &mut scaled.vertices {
            p.coords *= 2.0;
        }
        assert!((edge_length_penalty(&scaled, &tri).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn connectivity_must_match() {
        assert!(matches!(
            edge_length_penalty(&tetra(), &grid(2, 1.0)),
            Err(Error::ConnectivityMismatch)
        ));
    }
}
