//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Expression exceeded the configured monomial budget during normalization.
    #[error("expression swell: {terms} monomials exceeds budget {budget}")]
    Swell { terms: usize, budget: usize },

    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { msg: String, line: usize, col: usize },

    /// A binding targets a derivative slot (e.g. `f_x`) while the base
    /// function is also bound, or a binding is otherwise self-contradictory.
    #[error("inconsistent substitution: {0}")]
    InconsistentBinding(String),

    #[error("unbound symbol in evaluation context: {0}")]
    Unbound(String),

    #[error("matrix dimension mismatch: {0}x{0} vs {1}x{1}")]
    Dimension(usize, usize),

    #[error("cascade error: {0}")]
    Cascade(String),

    #[error("case file error: {0}")]
    Case(String),

    #[error("verification failure: {0}")]
    Verify(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
