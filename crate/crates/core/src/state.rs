//! Process state `(n, x, y)` and the deterministic pieces of the dynamics.
//!
//! `n` counts customers in the system (waiting plus in service), `x` is the
//! elapsed service time of the customer on the server and `y` is the arrival
//! clock, which restarts at every arrival and is kept across service
//! completions. When the server is idle `x` is pinned to zero.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::StateError;

/// A point of the state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateX {
    pub n: u32,
    pub x: f64,
    pub y: f64,
}

impl StateX {
    /// Checked constructor enforcing `x, y >= 0` and `x = 0` when idle.
    pub fn new(n: u32, x: f64, y: f64) -> Result<Self, StateError> {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 {
            return Err(StateError::Negative { n, x, y });
        }
        if n == 0 && x != 0.0 {
            return Err(StateError::IdleWithService { x });
        }
        Ok(Self { n, x, y })
    }

    /// The idle state with arrival clock `y`.
    pub const fn idle(y: f64) -> Self {
        Self { n: 0, x: 0.0, y }
    }

    /// The state entered at every idle-to-busy transition.
    pub const REGENERATION: StateX = StateX {
        n: 1,
        x: 0.0,
        y: 0.0,
    };

    pub fn is_busy(&self) -> bool {
        self.n > 0
    }

    /// Arrival: `(n + 1, x, 0)`. From idle this is always `(1, 0, 0)`.
    pub fn jump_up(&self) -> Self {
        Self {
            n: self.n + 1,
            x: if self.n == 0 { 0.0 } else { self.x },
            y: 0.0,
        }
    }

    /// Service completion: `((n - 1) v 0, 0, y)`.
    pub fn jump_down(&self) -> Self {
        Self {
            n: self.n.saturating_sub(1),
            x: 0.0,
            y: self.y,
        }
    }

    /// Deterministic motion between jumps. Both clocks run at unit speed,
    /// except `x` which is frozen while the server is idle.
    pub fn flow(&self, dt: f64) -> Self {
        debug_assert!(dt >= 0.0);
        Self {
            n: self.n,
            x: if self.n > 0 { self.x + dt } else { self.x },
            y: self.y + dt,
        }
    }

    /// `n + 1 + x + y`, the base of the Lyapunov weights.
    pub fn weight(&self) -> f64 {
        f64::from(self.n) + 1.0 + self.x + self.y
    }
}

impl fmt::Display for StateX {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.n, self.x, self.y)
    }
}

/// `L_m(X) = (n + 1 + x + y)^m`.
pub fn lyapunov_l(s: &StateX, m: u32) -> f64 {
    s.weight().powi(m as i32)
}

/// `L_{k,m}(t, X) = (1 + t)^k L_m(X)`.
pub fn lyapunov_lkm(t: f64, s: &StateX, k: u32, m: u32) -> f64 {
    (1.0 + t).powi(k as i32) * lyapunov_l(s, m)
}
