use std::path::PathBuf;

/// Errors produced by the registration library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point lies behind the camera (depth {0})")]
    NonPositiveDepth(f64),
    #[error("iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("mesh has zero extent along axis {axis}")]
    DegenerateExtent { axis: usize },
    #[error("landmark index {index} out of range for mesh with {vertex_count} vertices")]
    IndexMismatch { index: usize, vertex_count: usize },
    #[error("meshes have different connectivity")]
    ConnectivityMismatch,
    #[error("no geometry projects inside the image")]
    EmptyProjection,
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no model found with at least {min_inliers} inliers")]
    NoModelFound { min_inliers: usize },
    #[error("all {restarts} restarts failed")]
    AllRestartsFailed { restarts: usize },
    #[error("no canonical pose configured")]
    MissingCanonicalPose,
    #[error("non-positive denominator |I| - 2|C|d_max = {0}")]
    NonPositiveDenominator(f64),
    #[error("empty point set")]
    EmptySet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{}: parse error: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{}: dimension mismatch: {message}", path.display())]
    DimensionMismatch { path: PathBuf, message: String },
    #[error("{}: missing asset", path.display())]
    MissingAsset { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used to map errors onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Algorithmic,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::NoConvergence { .. }
            | Error::AllRestartsFailed { .. }
            | Error::NoModelFound { .. }
            | Error::EmptyProjection
            | Error::DegenerateConfiguration(_) => ErrorKind::Algorithmic,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
