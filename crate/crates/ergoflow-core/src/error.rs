use thiserror::Error;

/// Error type shared by the flow, averaging and discrete engines.
#[derive(Debug, Clone, Error)]
pub enum CoreError {
    /// A precondition on the call was violated (wrong variant, wrong arity,
    /// coordinate out of range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite or otherwise malformed numeric input.
    #[error("invalid input: {0}")]
    Input(String),

    /// The requested family/scheme/plan combination is not supported.
    #[error("configuration error: {0}")]
    Config(String),

    /// Domain error of an algebraic operation (e.g. decomposition of a
    /// degree-1 polynomial).
    #[error("domain error: {0}")]
    Domain(String),

    /// A floor orbit left the exactly-representable integer range.
    #[error("integer overflow: |{value}| exceeds the exact range of f64")]
    Overflow { value: f64 },

    /// An iteration failed to converge; carries the offending flow time.
    #[error("numeric instability at t = {t}: {what}")]
    NumericInstability { t: f64, what: String },

    /// The integrand produced a non-finite value; carries the time.
    #[error("evaluation error at t = {t}: non-finite integrand")]
    Evaluation { t: f64 },

    /// Desk-scale cap exceeded (e.g. box averages with k > 3).
    #[error("unsupported-scale: {0}")]
    UnsupportedScale(String),

    /// No formula / oracle is registered for the requested plan form.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
