//! Labelled-mesh data model, OBJ/landmark I/O and the mesh preprocessing and
//! regularization operators.

mod mesh;
mod obj;
mod ops;
pub mod shapes;

pub use mesh::{LabelledMesh, LandmarkClass, LandmarkFile, LandmarkSet3D};
pub use obj::{parse_obj, read_obj, to_obj_string, write_obj};
pub use ops::{
    boundary_vertices, dilate_labels_3d, edge_length_penalty, laplacian_smoothness,
    merge_view_landmarks, normalize_vertices, DEFAULT_DILATION_PASSES, DEFAULT_DILATION_RADIUS_MM,
};
