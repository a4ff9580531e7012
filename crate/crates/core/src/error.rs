use thiserror::Error;

/// Errors raised by chain construction, valuation and equilibrium analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("generator is {rows}x{cols} but {states} state values were given")]
    DimensionMismatch { rows: usize, cols: usize, states: usize },
    #[error("negative off-diagonal rate q[{from}][{to}] = {rate}")]
    NegativeRate { from: usize, to: usize, rate: f64 },
    #[error("row {row} of the generator sums to {sum}, expected 0")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("state {index} has negative value {value}")]
    NegativeStateValue { index: usize, value: f64 },
    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },
    #[error("state index {index} is out of range for a chain with {len} states")]
    StateOutOfRange { index: usize, len: usize },
    #[error("continuation set is empty")]
    EmptyContinuation,
    #[error("tolerance {tol:e} not reached: {reason}")]
    ToleranceUnreachable { tol: f64, reason: String },
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("rate must be positive, got {0}")]
    NonpositiveRate(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("state {0} is not in the stopping region")]
    StateNotInRegion(usize),
    #[error("enumeration over {free} free states exceeds the limit of {limit}")]
    EnumerationTooLarge { free: usize, limit: usize },
    #[error("first-order condition is not critical (residual {residual:e})")]
    FirstOrderNotCritical { residual: f64 },
    #[error("parameters must satisfy a > b > 0 (got a = {a}, b = {b})")]
    ParameterOrderViolation { a: f64, b: f64 },
    #[error("region is not a mild equilibrium (state {state} prefers stopping by {excess:e})")]
    NotMild { state: usize, excess: f64 },
    #[error("truncation too narrow: {0}")]
    TruncationTooNarrow(String),
    #[error("series did not converge after {terms} terms")]
    SeriesDivergence { terms: usize },
    #[error("threshold exponent {value} is an integer; exercise boundary is degenerate")]
    DegenerateThreshold { value: f64 },
    #[error("time grid too coarse: dt-halving changed the value by {change:e} (limit {limit:e})")]
    GridTooCoarse { change: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
