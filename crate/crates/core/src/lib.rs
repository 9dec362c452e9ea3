//! Simulation and statistical verification for a single-server queue whose
//! arrival and service intensities depend on the full state `(n, x, y)`.
//!
//! The process is piecewise deterministic: between jumps the elapsed-service
//! clock `x` and the arrival clock `y` grow at unit rate, and jumps happen at
//! state-dependent hazard rates. The crate provides the intensity model, an
//! exact simulator, regenerative and Monte Carlo estimators, closed-form
//! oracles and the `varq` batch front-end.

// `!(v > 0.0)` is used deliberately so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod estimators;
pub mod expr;
pub mod intensity;
pub mod oracles;
pub mod quadrature;
pub mod rng;
pub mod simulator;
pub mod state;
pub mod testfn;

pub use error::{
    ConfigError, EstimateError, EvalError, FieldError, ParseError, QuadratureError, SimError,
};
pub use expr::{parse_intensity, IntensityExpr};
pub use intensity::{ConditionReport, GridSpec, IntensityField};
pub use rng::SeedSpec;
pub use simulator::{EventKind, Sampler, Trajectory};
pub use state::{lyapunov_l, lyapunov_lkm, StateX};
