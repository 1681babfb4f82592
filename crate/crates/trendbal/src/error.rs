//! Crate-wide error type.

use thiserror::Error;

/// Alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by panel construction, solvers, and estimators.
#[derive(Debug, Error)]
pub enum Error {
    /// File or CSV level problem.
    #[error("parse error: {0}")]
    Parse(String),

    /// A (unit, period) cell is absent or duplicated.
    #[error("unbalanced panel: {detail} for unit '{unit}', period '{period}'")]
    BalancedPanel {
        unit: String,
        period: String,
        detail: String,
    },

    /// A referenced unit, period, or column does not exist.
    #[error("unknown {kind} '{label}'")]
    UnknownLabel { kind: String, label: String },

    /// A constraint matrix is not of full row rank.
    #[error("constraint matrix is rank deficient: row {row} ({desc}) is linearly dependent on earlier rows")]
    RankDeficient { row: usize, desc: String },

    /// More equality constraints than weights.
    #[error("constraint system is not underdetermined: {constraints} constraints for {weights} weights{hint}")]
    Underdetermined {
        constraints: usize,
        weights: usize,
        hint: String,
    },

    /// A matrix that must be invertible is singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Incompatible dimensions between inputs.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The QP constraints admit no feasible point.
    #[error("infeasible constraints: {certificate}")]
    Infeasible { certificate: String },

    /// An iterative solver ran out of iterations. Carries the best iterate
    /// when the solver tracks one.
    #[error("solver did not converge within {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Option<Box<crate::qp::QpSolution>>,
    },

    /// Not enough observations for the requested regression.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A tuning parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
