use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidPose};

/// Anatomical landmark classes annotated on the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkClass {
    Ridge,
    Ligament,
}

impl LandmarkClass {
    pub const ALL: [LandmarkClass; 2] = [LandmarkClass::Ridge, LandmarkClass::Ligament];

    pub fn name(self) -> &'static str {
        match self {
            LandmarkClass::Ridge => "ridge",
            LandmarkClass::Ligament => "ligament",
        }
    }
}

/// Per-class vertex membership. A vertex may belong to both classes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LandmarkSet3D {
    pub ridge: BTreeSet<usize>,
    pub ligament: BTreeSet<usize>,
}

impl LandmarkSet3D {
    pub fn new(ridge: impl IntoIterator<Item = usize>, ligament: impl IntoIterator<Item = usize>) -> Self {
        Self {
            ridge: ridge.into_iter().collect(),
            ligament: ligament.into_iter().collect(),
        }
    }

    pub fn class(&self, class: LandmarkClass) -> &BTreeSet<usize> {
        match class {
            LandmarkClass::Ridge => &self.ridge,
            LandmarkClass::Ligament => &self.ligament,
        }
    }

    pub fn class_mut(&mut self, class: LandmarkClass) -> &mut BTreeSet<usize> {
        match class {
            LandmarkClass::Ridge => &mut self.ridge,
            LandmarkClass::Ligament => &mut self.ligament,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ridge.is_empty() && self.ligament.is_empty()
    }

    /// Indices in either class, ascending.
    pub fn all(&self) -> BTreeSet<usize> {
        self.ridge.union(&self.ligament).copied().collect()
    }

    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        for &index in self.ridge.iter().chain(self.ligament.iter()) {
            if index >= vertex_count {
                return Err(Error::IndexMismatch {
                    index,
                    vertex_count,
                });
            }
        }
        Ok(())
    }
}

/// On-disk landmark file: `{"ridge": [...], "ligament": [...]}` with 0-based indices.
///
/// `anterior` optionally declares the model-frame direction of the liver's anterior side.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct LandmarkFile {
    #[serde(default)]
    pub ridge: Vec<usize>,
    #[serde(default)]
    pub ligament: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anterior: Option<[f64; 3]>,
}

impl LandmarkFile {
    pub fn landmarks(&self) -> LandmarkSet3D {
        LandmarkSet3D::new(self.ridge.iter().copied(), self.ligament.iter().copied())
    }

    pub fn from_landmarks(set: &LandmarkSet3D, anterior: Option<Vector3<f64>>) -> Self {
        Self {
            ridge: set.ridge.iter().copied().collect(),
            ligament: set.ligament.iter().copied().collect(),
            anterior: anterior.map(|a| [a.x, a.y, a.z]),
        }
    }
}

/// Triangle mesh (millimetres) with per-vertex landmark labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
    pub labels: LandmarkSet3D,
    /// Model-frame direction of the anterior surface (unit length).
    pub anterior: Vector3<f64>,
}

impl LabelledMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            faces,
            labels: LandmarkSet3D::default(),
            anterior: Vector3::z(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_labels(mut self, labels: LandmarkSet3D) -> Result<Self> {
        labels.validate(self.vertices.len())?;
        self.labels = labels;
        Ok(self)
    }

    pub fn with_anterior(mut self, anterior: Vector3<f64>) -> Result<Self> {
        let n = anterior.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidArgument("anterior direction must be non-zero".into()));
        }
        self.anterior = anterior / n;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                if i >= n {
                    return Err(Error::IndexMismatch {
                        index: i,
                        vertex_count: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidArgument(format!("face {fi} repeats a vertex")));
            }
        }
        if self.vertices.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("non-finite vertex".into()));
        }
        self.labels.validate(n)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn centroid(&self) -> Point3 {
        if self.vertices.is_empty() {
            return Point3::origin();
        }
        let sum: Vector3<f64> = self.vertices.iter().map(|p| p.coords).sum();
        Point3::from(sum / self.vertices.len() as f64)
    }

    /// Area-weighted vertex normals following the face winding. Isolated vertices get zero.
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i]);
            let n = (b - a).cross(&(c - a));
            for &i in f {
                normals[i] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// One-ring neighbours of each vertex, ascending.
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut rings = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            rings[a].push(b);
            rings[b].push(a);
        }
        for r in &mut rings {
            r.sort_unstable();
        }
        rings
    }

    pub fn transformed(&self, pose: &RigidPose) -> LabelledMesh {
        LabelledMesh {
            vertices: self.vertices.iter().map(|p| pose.apply(p)).collect(),
            faces: self.faces.clone(),
            labels: self.labels.clone(),
            anterior: pose.rotation() * self.anterior,
        }
    }

    pub fn landmark_points(&self, class: LandmarkClass) -> Vec<Point3> {
        self.labels
            .class(class)
            .iter()
            .map(|&i| self.vertices[i])
            .collect()
    }
}
