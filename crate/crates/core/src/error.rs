use thiserror::Error;

/// Errors produced by fitting, evaluation and the built-in problems.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input {value} outside the Legendre domain [-1, 1]")]
    Domain { value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{quad_points} quadrature points cannot integrate degree {degree} exactly (need {required})")]
    QuadraturePrecision {
        quad_points: usize,
        degree: usize,
        required: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("normal matrix is singular or ill-conditioned (smallest eigenvalue {min_eigenvalue:e}); enable regularization or reduce the rank / degree")]
    Conditioning { min_eigenvalue: f64 },

    #[error("degenerate model: second moment is not positive (smallest eigenvalue of B {min_eigenvalue:e})")]
    DegenerateModel { min_eigenvalue: f64 },

    #[error("factor {term} in dimension {dim} has zero empirical norm")]
    DegenerateFactor { dim: usize, term: usize },

    #[error("GCV produced no finite value on the lambda grid")]
    GcvSelection,

    #[error("selection failed: every (r, M) pair has an infinite error indicator")]
    SelectionFailure,

    #[error("missing final-sweep records for rank {0}")]
    MissingRecords(usize),

    #[error("diffusion coefficient not positive ({value:e}) at x = {x}")]
    Positivity { x: f64, value: f64 },

    #[error("solution value {value:e} at the query point is not positive")]
    NonPositiveSolution { value: f64 },

    #[error("only {found} positive KL eigenvalues, {wanted} requested")]
    Resolution { found: usize, wanted: usize },

    #[error("{samples} samples cannot determine {unknowns} coefficients")]
    TooFewSamples { samples: usize, unknowns: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
