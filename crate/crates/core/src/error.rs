use thiserror::Error;

/// Errors raised by market validation and the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("probability and price vectors differ in length ({p} vs {q})")]
    LengthMismatch { p: usize, q: usize },

    #[error("at least two outcomes are required, got {0}")]
    TooFewOutcomes(usize),

    #[error("entry {index} of `{field}` is not a positive finite number ({value})")]
    NonPositiveEntry {
        field: &'static str,
        index: usize,
        value: f64,
    },

    #[error("probabilities sum to {sum}, not 1")]
    ProbabilityMassError { sum: f64 },

    #[error("terminal wealth in outcome {index} is not positive ({value})")]
    NonPositiveWealth { index: usize, value: f64 },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("parameter `{name}` = {value} is outside the supported range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("market is not overround (sum of state prices = {price_sum})")]
    NotOverround { price_sum: f64 },

    #[error("market is not fair (sum of state prices = {price_sum})")]
    NotFair { price_sum: f64 },

    #[error("no index k satisfies L_k > tau_k >= L_(k+1)")]
    NoPrefix,

    #[error("prefix condition holds for several indices {candidates:?}")]
    NonUniquePrefix { candidates: Vec<usize> },

    #[error("ratio r = {0} must exceed 1")]
    DomainError(f64),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("no feasible point with positive wealth")]
    InfeasibleModel,

    #[error("grid resolution {0} is too coarse (minimum 50)")]
    ResolutionTooCoarse(usize),

    #[error("brute-force oracle supports at most {max} outcomes, got {n}")]
    TooManyOutcomes { n: usize, max: usize },

    #[error("oracle winner beaten by grid point: {winner} < {grid}")]
    OracleDisagreement { winner: f64, grid: f64 },
}

impl Error {
    /// True for failures of an iterative method rather than of the model.
    pub fn is_convergence(&self) -> bool {
        matches!(self, Error::ConvergenceFailure { .. } | Error::OracleDisagreement { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
