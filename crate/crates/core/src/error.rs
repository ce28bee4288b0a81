use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid offspring law: {0}")]
    InvalidLaw(String),

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("operation not supported for {kind} environments: {op}")]
    Unsupported { kind: &'static str, op: &'static str },

    /// A rate formula was requested for an environment that is not
    /// supercritical (`E log m_0 <= 0`).
    #[error("environment is not supercritical: E log m_0 = {expected_log_mean}")]
    Subcritical { expected_log_mean: f64 },

    #[error("moment recursion overflowed at n = {n}, order {k}")]
    Overflow { n: usize, k: usize },

    #[error("estimate unavailable: {0}")]
    EstimateUnavailable(String),

    #[error("decay fit unavailable: {0}")]
    FitUnavailable(String),
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
