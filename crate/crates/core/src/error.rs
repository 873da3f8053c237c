use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is singular (sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e})")]
    SingularMatrix { sigma_min: f64, sigma_max: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },

    #[error("no stabilizing solution of the algebraic Riccati equation: {reason}")]
    NoStabilizingSolution { reason: String },

    #[error("invalid basis matrix: {reason}")]
    InvalidUserBasis { reason: String },

    #[error("{op}: argument outside its domain ({reason})")]
    DomainViolation { op: &'static str, reason: String },

    #[error("{op}: off-diagonal blocks disagree by {deviation:e}")]
    SymmetryViolation { op: &'static str, deviation: f64 },

    #[error("ostar: Lhat11 + L22 leaves the negative semidefinite cone (max eigenvalue {max_eig:e}){}",
        index.map(|k| format!(" at table index {k}")).unwrap_or_default())]
    NotInCone { max_eig: f64, index: Option<usize> },

    #[error("X_t singular at t = {t}: solution has escaped")]
    EscapeEncountered { t: f64 },

    #[error("initial condition not in S_>M: min eigenvalue of P0 - M is {min_eig:e}")]
    InitOutOfClass { min_eig: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("semigroup table format error on line {line}: {reason}")]
    TableFormat { line: usize, reason: String },
}
