//! Procedural test meshes: icospheres, UV spheres and labelled liver-like blobs.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::geometry::Point3;
use crate::meshproc::{LabelledMesh, LandmarkSet3D};

/// Unit icosphere with `level` midpoint subdivisions (20·4^level faces), outward winding.
pub fn icosphere(level: u32) -> LabelledMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    LabelledMesh::new(verts.into_iter().map(Point3::from).collect(), faces)
        .expect("icosphere is well formed")
}

/// Unit UV sphere with `lon` segments and `rings` latitude rings between the poles.
/// Face count is `2·lon·rings`.
pub fn uv_sphere(lon: usize, rings: usize) -> LabelledMesh {
    assert!(lon >= 3 && rings >= 1);
    let mut v = vec![Point3::new(0.0, 1.0, 0.0)];
    for r in 0..rings {
        let theta = std::f64::consts::PI * (r + 1) as f64 / (rings + 1) as f64;
        for k in 0..lon {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / lon as f64;
            v.push(Point3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin()));
        }
    }
    v.push(Point3::new(0.0, -1.0, 0.0));
    let bottom = v.len() - 1;
    let ring = |r: usize, k: usize| 1 + r * lon + (k % lon);
    let mut f = Vec::new();
    for k in 0..lon {
        f.push([0, ring(0, k + 1), ring(0, k)]);
    }
    for r in 0..rings - 1 {
        for k in 0..lon {
            f.push([ring(r, k), ring(r, k + 1), ring(r + 1, k + 1)]);
            f.push([ring(r, k), ring(r + 1, k + 1), ring(r + 1, k)]);
        }
    }
    for k in 0..lon {
        f.push([bottom, ring(rings - 1, k), ring(rings - 1, k + 1)]);
    }
    LabelledMesh::new(v, f).expect("uv sphere is well formed")
}

/// Shape parameters of the synthetic liver blob (millimetres).
#[derive(Debug, Clone, Copy)]
pub struct BlobParams {
    pub semi_axes: [f64; 3],
    pub bump: f64,
    pub subdivisions: u32,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            semi_axes: [100.0, 65.0, 45.0],
            bump: 0.08,
            subdivisions: 3,
        }
    }
}

/// Icosphere-derived blob with a painted ridge (anterior-inferior arc) and ligament
/// (anterior meridian). Model frame: +x right, +y superior, +z anterior.
pub fn liver_blob(params: &BlobParams) -> LabelledMesh {
    let sphere = icosphere(params.subdivisions);
    let [a, b, c] = params.semi_axes;
    // Label band half-width in direction space, about half the vertex spacing.
    let band = 0.55 * 1.1 / f64::from(1u32 << params.subdivisions);
    let mut ridge = Vec::new();
    let mut ligament = Vec::new();
    let vertices = sphere
        .vertices
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (x, y, z) = (d.x, d.y, d.z);
            let bump = 1.0
                + params.bump
                    * ((2.1 * x + 0.7).sin() * (1.7 * y - 0.3).cos() + 0.5 * (3.0 * z + 1.1 * x).sin());
            // The ridge sits at a fixed latitude below the equator; the ligament follows
            // a meridian slightly right of the midline.
            if z > 0.05 && (y + 0.55).abs() < band {
                ridge.push(i);
            }
            if z > 0.3 && y > -0.35 && (x - 0.18).abs() < band {
                ligament.push(i);
            }
            Point3::new(a * x * bump, b * y * bump, c * z * bump)
        })
        .collect();
    LabelledMesh::new(vertices, sphere.faces)
        .and_then(|m| m.with_labels(LandmarkSet3D::new(ridge, ligament)))
        .expect("blob is well formed")
}
