//! Rigid registration of labelled preoperative liver meshes to laparoscopic
//! landmark annotations, plus the landmark and registration evaluation metrics.

pub mod error;
pub mod geometry;
pub mod meshproc;
pub mod metrics;
pub mod pixels;
pub mod register;
pub mod render;
pub mod spatial;
pub mod tooling;

pub use error::{Error, ErrorKind, Result};
