use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix expected to be unitary failed the `‖U†U − 1‖_max` check.
    #[error("matrix is not unitary: max deviation {dev:.3e} exceeds {tol:.3e}")]
    NotUnitary { dev: f64, tol: f64 },

    /// Coefficient tensors violate the Hermiticity conditions.
    #[error("operator is not Hermitian: max deviation {dev:.3e}")]
    NotHermitian { dev: f64 },

    /// Shapes of two objects that must agree do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// An index was outside its valid range.
    #[error("index out of range in {context}: {index} not below {bound}")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        bound: usize,
    },

    /// An operation required the orthogonality centre at a specific site.
    #[error("canonical centre must be at site {expected}, found {found:?}")]
    WrongCenter {
        expected: usize,
        found: Option<usize>,
    },

    /// A gate or operator would move amplitude between charge sectors.
    #[error("operator violates the U(1)^p charge structure: {0}")]
    ChargeViolation(String),

    /// Input text could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An iterative eigensolver ran out of iterations. The best Ritz pair
    /// found so far is carried along.
    #[error("eigensolver did not converge after {iters} iterations (residual {residual:.3e})")]
    EigensolverStalled {
        iters: usize,
        residual: f64,
        best: Box<(f64, Vec<crate::C64>)>,
    },

    /// The Householder parametrisation stayed singular through all retries.
    #[error("singular Grassmann representative survived {retries} retries")]
    SingularRepresentative { retries: usize },

    /// Self-consistent field loop failed to converge.
    #[error("SCF did not converge after {iters} iterations (density change {delta:.3e})")]
    ScfStalled { iters: usize, delta: f64 },

    /// Problem size exceeds a hard cap of the dense/oracle machinery.
    #[error("problem too large for {context}: {size} exceeds cap {cap}")]
    TooLarge {
        context: &'static str,
        size: usize,
        cap: usize,
    },

    /// Invalid run configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Serialisation failure in checkpoint or report files.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
