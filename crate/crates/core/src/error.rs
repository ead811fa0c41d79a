use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("coincident points: kNN scale {scale:e} of point {index} is below the duplicate threshold")]
    DuplicatePoint { index: usize, scale: f64 },

    #[error("eigensolver failed: {0}")]
    EigensolverFailure(String),

    #[error("kernel graph is numerically disconnected: {near_zero} eigenvalues within 1e-8 of zero")]
    DisconnectedGraph { near_zero: usize },

    #[error("kernel eigenvalue {lambda:e} of mode {mode} is too small for Nystrom extension")]
    SmallEigenvalue { mode: usize, lambda: f64 },

    #[error("query lies on a kNN-set boundary (gap {gap:e}); the extension is not differentiable there")]
    KnnBoundary { gap: f64 },

    #[error("no training point inside the indicator kernel support of the query")]
    EmptyKernelSupport,

    #[error("Sobolev basis is empty: no eigenvalue of E + G passed the threshold")]
    DegenerateFrame,

    #[error("projected Gram matrix is singular (eigenvalue ratio {ratio:e})")]
    SingularGram { ratio: f64 },

    #[error("tangent frame rank {rank} is below the requested dimension {dim}")]
    RankDeficiency { rank: usize, dim: usize },

    #[error("gradient step stalled: displacement {displacement:e}")]
    Stalled { displacement: f64 },
}

impl Error {
    /// Stable type name used in command-line diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInputError",
            Error::DuplicatePoint { .. } => "DuplicatePointError",
            Error::EigensolverFailure(_) => "EigensolverFailure",
            Error::DisconnectedGraph { .. } => "DisconnectedGraphError",
            Error::SmallEigenvalue { .. } => "SmallEigenvalueError",
            Error::KnnBoundary { .. } => "KnnBoundaryError",
            Error::EmptyKernelSupport => "EmptyKernelSupportError",
            Error::DegenerateFrame => "DegenerateFrameError",
            Error::SingularGram { .. } => "SingularGramError",
            Error::RankDeficiency { .. } => "RankDeficiencyError",
            Error::Stalled { .. } => "StalledError",
        }
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, Error::InvalidInput(_))
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
