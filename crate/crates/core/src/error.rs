use thiserror::Error;

/// Errors produced by the estimation, tuning and variance routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("Jacobian is numerically singular (condition number {condition:.3e})")]
    SingularJacobian { condition: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("iterate left the parameter domain and projection did not reduce the residual")]
    DomainEscape,

    #[error("non-finite value while evaluating {what}")]
    NonFinite { what: &'static str },

    #[error("leave-one-out refits failed for {} of {n} rows", failed.len())]
    RefitFailure { failed: Vec<usize>, n: usize },

    #[error("criterion failed on {failed} of {total} grid points")]
    CriterionFailure { failed: usize, total: usize },

    #[error("full variance assembly requested at a boundary fit")]
    BoundaryFit,

    #[error("Psi' is close to singular (singular value ratio {ratio:.3e}); theta_0(lambda) may be flat")]
    FlatLimitSuspected { ratio: f64 },

    #[error("model cannot be evaluated outside its tuning domain")]
    EvaluationOutsideDomain,

    #[error("{failed} of {total} replications failed")]
    FailureRateExceeded { failed: usize, total: usize },

    #[error("rank deficient design: {0}")]
    RankDeficient(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidInput(_) | Error::Parse { .. } | Error::Io(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::SingularJacobian { .. } => "SingularJacobian",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::DomainEscape => "DomainEscape",
            Error::NonFinite { .. } => "NonFinite",
            Error::RefitFailure { .. } => "RefitFailure",
            Error::CriterionFailure { .. } => "CriterionFailure",
            Error::BoundaryFit => "BoundaryFit",
            Error::FlatLimitSuspected { .. } => "FlatLimitSuspected",
            Error::EvaluationOutsideDomain => "EvaluationOutsideDomain",
            Error::FailureRateExceeded { .. } => "FailureRateExceeded",
            Error::RankDeficient(_) => "RankDeficient",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Parse { .. } => "Parse",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
