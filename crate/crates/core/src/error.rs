use thiserror::Error;

/// Errors raised by model construction, forward evaluation and reconstruction.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-generic spectrum: {0}")]
    NonGenericSpectrum(String),

    #[error("defective matrix: eigenvector condition number {cond:.3e} exceeds {limit:.1e}")]
    DefectiveMatrix { cond: f64, limit: f64 },

    #[error("eigenvalue iteration did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("imaginary residue {imag:.3e} exceeds tolerance for real-valued quantity {real:.3e}")]
    ComplexResult { real: f64, imag: f64 },

    #[error("points must be sorted ascending")]
    UnsortedPoints,

    #[error("quadrature did not converge: achieved error estimate {achieved:.3e}, requested {requested:.3e}")]
    QuadratureNonConvergence { achieved: f64, requested: f64 },

    #[error("negative density {value:.3e} at tau = {tau}")]
    NegativeDensity { tau: f64, value: f64 },

    #[error("grid too coarse: Richardson estimates differ by {discrepancy:.3e}")]
    GridTooCoarse { discrepancy: f64 },

    #[error("normalization impossible: {0}")]
    Normalization(String),

    #[error("requested order {order} exceeds what the data supports: {reason}")]
    OrderTooHigh { order: usize, reason: String },

    #[error("sampling grid is not uniform")]
    NonUniformGrid,

    #[error("ill-conditioned basis: condition number {0:.3e}")]
    IllConditionedBasis(f64),

    #[error("unphysical growing exponent with real part {0:.3e}")]
    GrowingExponent(f64),

    #[error("coefficient {index} has magnitude {magnitude:.3e}, too small for gauge division")]
    ZeroCoefficient { index: usize, magnitude: f64 },

    #[error("exponent sets disagree: {0}")]
    OrderMismatch(String),

    #[error("exponents admit no Kronecker-sum factorization: {0}")]
    FactorizationFailure(String),

    #[error("reconstruction is ambiguous: {0}")]
    SolveAmbiguous(String),

    #[error("spike train has too few clicks: {0}")]
    EmptyTrain(String),

    #[error("decay not resolvable: {0}")]
    UnresolvableDecay(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by malformed or inconsistent input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch(_)
                | Error::InvalidModel(_)
                | Error::InvalidInput(_)
                | Error::UnsortedPoints
                | Error::NonUniformGrid
                | Error::EmptyTrain(_)
                | Error::Parse(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// `read_to_string` whose error names the file.
pub(crate) fn read_text(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
