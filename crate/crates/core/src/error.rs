use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed input: wrong shape, non-finite entries, unsorted lists and so on.
    #[error("validation error: {0}")]
    Validation(String),

    /// The eigensolver failed to converge.
    #[error("eigensolver did not converge (dim {dim}, max |entry| {max_abs:.3e}, frobenius {frobenius:.3e})")]
    Numerical {
        dim: usize,
        max_abs: f64,
        frobenius: f64,
    },

    /// The input lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range 1..={len}")]
    Index { index: usize, len: usize },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    /// The spectrum did not separate into at least `r` clusters at this delta.
    #[error("cluster {r} not found: only {nu} delta-clusters at delta = {delta:.6e}")]
    ClusterNotFound { r: usize, nu: usize, delta: f64 },

    /// The quantity requires a simple eigenvalue at rank `r`.
    #[error("rank {r} has multiplicity {multiplicity}, expected a simple eigenvalue")]
    Multiplicity { r: usize, multiplicity: usize },

    /// Perturbed and unperturbed eigenvalues could not be matched by index.
    #[error("eigenvalue matching failed: {0}")]
    Matching(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// One or more admissibility conditions of the lower bound fail.
    #[error("inadmissible lower-bound parameters: {}", .0.join("; "))]
    Admissibility(Vec<String>),

    /// A subsample of the split estimator failed.
    #[error("estimation failed on subsample {subsample}: {source}")]
    Estimation {
        subsample: usize,
        #[source]
        source: Box<Error>,
    },

    /// Every replicate failed, so no statistic can be formed.
    #[error("degenerate: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Short machine-readable tag, used for failure accounting in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Numerical { .. } => "numerical",
            Error::Domain(_) => "domain",
            Error::Index { .. } => "index",
            Error::NotPsd { .. } => "not_psd",
            Error::ClusterNotFound { .. } => "cluster_not_found",
            Error::Multiplicity { .. } => "multiplicity",
            Error::Matching(_) => "matching",
            Error::Precondition(_) => "precondition",
            Error::Admissibility(_) => "admissibility",
            Error::Estimation { source, .. } => source.kind(),
            Error::Degenerate(_) => "degenerate",
        }
    }
}
