use thiserror::Error;

use crate::state::StateX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("state ({n}, {x}, {y}) has a negative or non-finite clock")]
    Negative { n: u32, x: f64, y: f64 },
    #[error("idle state must have x = 0, got x = {x}")]
    IdleWithService { x: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("function `{name}` at byte {pos} expects {expected} argument(s), got {got}")]
    Arity {
        pos: usize,
        name: String,
        expected: String,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("intensity evaluates to {value} at state {state}")]
    Domain { state: StateX, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("adaptive quadrature did not converge on [{a}, {b}] (error estimate {error:e})")]
    NoConvergence { a: f64, b: f64, error: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("declared bound {name} = {value} must be positive and finite")]
    BadBound { name: &'static str, value: f64 },
    #[error("arrival rate for the idle state may only depend on y")]
    IdleRateDependsOnState,
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("thinning sampler stalled after {proposals} rejected proposals at state {state}")]
    Stall { state: StateX, proposals: u64 },
    #[error("total hazard {rate} at state {state} exceeds the declared bound {bound}")]
    BoundViolated {
        state: StateX,
        rate: f64,
        bound: f64,
    },
    #[error("regeneration cycle exceeded length cap {cap} (unstable regime?)")]
    CycleCap { cap: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("need at least {needed} regeneration cycles, got {got}")]
    InsufficientCycles { needed: usize, got: usize },
    #[error("censored fraction {fraction} at start {start} exceeds the 1% limit")]
    TooManyCensored { start: StateX, fraction: f64 },
    #[error("hitting-moment experiment needs m > k (got k = {k}, m = {m})")]
    MomentOrder { k: u32, m: u32 },
    #[error("functional index {index} was not registered with the cycles")]
    UnknownFunctional { index: usize },
    #[error("convergence grid is uninformative: every point is at the noise floor")]
    Uninformative,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

impl From<EvalError> for EstimateError {
    fn from(e: EvalError) -> Self {
        EstimateError::Sim(SimError::Eval(e))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("unstable regime: load {rho} must be below 1")]
    Unstable { rho: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid experiment block: {0}")]
    Invalid(String),
}
