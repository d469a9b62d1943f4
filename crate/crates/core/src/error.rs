use alloc::string::String;

/// Errors raised by the selection library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A parameter was outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An expression referenced a candidate that does not exist.
    #[error("candidate index {index} out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },

    /// An expression evaluated to an undefined value such as `inf - inf`.
    #[error("expression evaluation is undefined: {0}")]
    Indeterminate(String),

    /// An expression could not be built from the given parts.
    #[error("malformed expression: {0}")]
    MalformedExpr(String),

    /// Text could not be parsed as an expression.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A query would overspend the oracle's budget.
    #[error("budget exceeded: spent {spent} + requested {requested} > total {total}")]
    BudgetExceeded {
        spent: f64,
        requested: f64,
        total: f64,
    },

    /// A query's structural sensitivity bound is above one.
    #[error("query sensitivity bound {0} exceeds 1")]
    SensitivityViolation(f64),

    /// A query's true value is not a finite real.
    #[error("query value is not finite")]
    NonFiniteQuery,

    /// A mechanism issued more rounds than it declared.
    #[error("mechanism issued more than the declared {0} rounds")]
    RoundsExceeded(usize),

    /// The requested run exceeds the configured work limit.
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
