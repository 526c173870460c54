use thiserror::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while slicing, fitting or simulating.
#[derive(Debug, Error)]
pub enum Error {
    /// The response cannot be split into the requested number of slices.
    #[error("degenerate response: {0}")]
    DegenerateResponse(String),

    /// A slice proportion is zero or negative.
    #[error("slice {0} has zero proportion")]
    DegenerateSlice(usize),

    /// A matrix expected to be symmetric is not, beyond tolerance.
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    /// The predictor covariance is numerically singular or requires more
    /// positive eigenvalues than it has.
    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    /// The basis covariance W cannot be inverted.
    #[error("basis covariance W is numerically singular")]
    SingularBasisCovariance,

    /// The leading eigenvalue is numerically zero: the slice means carry no
    /// direction information.
    #[error("no inverse-regression signal (leading eigenvalue {0:.3e})")]
    NoSignal(f64),

    /// More directions were requested than the problem supports.
    #[error("requested {requested} directions but only {available} are available")]
    SubspaceTooSmall { requested: usize, available: usize },

    /// The reduced pencil matrix is not positive definite; usually a rank or
    /// tolerance misconfiguration.
    #[error("Cholesky factorization failed: pencil matrix is not positive definite")]
    CholeskyFailure,

    /// The noise covariance V passed to an objective is not positive definite.
    #[error("matrix V is not positive definite")]
    NonPositiveDefinite,

    /// An eigenvalue fell outside [0, 1).
    #[error("eigenvalue {0} outside [0, 1)")]
    OutOfRange(f64),

    /// The fitted index is (nearly) constant, so no link can be estimated.
    #[error("index values are degenerate (nearly constant)")]
    DegenerateIndex,

    /// The population direction needs at least five coordinates.
    #[error("dimension p = {0} too small (need p >= 5)")]
    DimensionTooSmall(usize),

    /// Matrix or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A configuration value is out of its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// NaN or infinity where a finite number was required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
