use thiserror::Error;

/// Errors raised by the samplers, kernels and experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "base size {base} too small: truncation exponent {epsilon_tilde} outside (0, 1/alpha); \
         minimal admissible base is {min_base}"
    )]
    Sizing {
        base: u64,
        epsilon_tilde: f64,
        min_base: u64,
    },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate conditioning: P({side}) = {probability}")]
    DegenerateConditioning { side: &'static str, probability: f64 },

    #[error("wrong truncation regime: {0}")]
    WrongRegime(&'static str),

    #[error("no all-ones label column (probability bound {probability_bound:e})")]
    Inapplicable { probability_bound: f64 },

    #[error("budget exceeded: need {required}, budget {budget}")]
    Budget { required: f64, budget: f64 },

    #[error("vector is not unit norm (norm {0})")]
    NotUnit(f64),

    #[error("singular value iteration did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error after {written} records: {source}")]
    Io {
        written: usize,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
