//! Closed-form references: M/M/1 stationary law and busy period, the
//! Pollaczek–Khinchine mean for M/G/1, and hazard-rate representations of
//! a few service-time families.

use serde::{Deserialize, Serialize};

use crate::error::OracleError;
use crate::expr::{parse_intensity, IntensityExpr};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MM1Params {
    pub lambda: f64,
    pub mu: f64,
}

impl MM1Params {
    pub fn new(lambda: f64, mu: f64) -> Result<Self, OracleError> {
        if !(lambda >= 0.0 && lambda.is_finite() && mu > 0.0 && mu.is_finite()) {
            return Err(OracleError::Parameter(format!(
                "lambda = {lambda}, mu = {mu}"
            )));
        }
        Ok(Self { lambda, mu })
    }

    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }

    fn stable(&self) -> Result<f64, OracleError> {
        let rho = self.rho();
        if rho < 1.0 {
            Ok(rho)
        } else {
            Err(OracleError::Unstable { rho })
        }
    }
}

/// `(1 - rho) rho^m`.
pub fn mm1_stationary(p: &MM1Params, m: u32) -> Result<f64, OracleError> {
    let rho = p.stable()?;
    Ok((1.0 - rho) * rho.powi(m as i32))
}

/// `1 / (mu - lambda)`.
pub fn mm1_busy_period_mean(p: &MM1Params) -> Result<f64, OracleError> {
    p.stable()?;
    Ok(1.0 / (p.mu - p.lambda))
}

/// Stationary mean number in system, `rho / (1 - rho)`.
pub fn mm1_mean_number(p: &MM1Params) -> Result<f64, OracleError> {
    let rho = p.stable()?;
    Ok(rho / (1.0 - rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ServiceLaw {
    Exponential {
        rate: f64,
    },
    Erlang {
        shape: u32,
        rate: f64,
    },
    /// Survival `(1 + x)^(-c0)`, hazard `c0 / (1 + x)`.
    ParetoHazard {
        c0: f64,
    },
}

impl ServiceLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            ServiceLaw::Exponential { rate } => 1.0 / rate,
            ServiceLaw::Erlang { shape, rate } => f64::from(shape) / rate,
            ServiceLaw::ParetoHazard { c0 } if c0 > 1.0 => 1.0 / (c0 - 1.0),
            ServiceLaw::ParetoHazard { .. } => f64::INFINITY,
        }
    }

    /// Squared coefficient of variation.
    pub fn scv(&self) -> f64 {
        match *self {
            ServiceLaw::Exponential { .. } => 1.0,
            ServiceLaw::Erlang { shape, .. } => 1.0 / f64::from(shape),
            // E X^2 = 2 / ((c0 - 1)(c0 - 2))
            ServiceLaw::ParetoHazard { c0 } if c0 > 2.0 => c0 / (c0 - 2.0),
            ServiceLaw::ParetoHazard { .. } => f64::INFINITY,
        }
    }

    pub fn survival(&self, x: f64) -> f64 {
        match *self {
            ServiceLaw::Exponential { rate } => (-rate * x).exp(),
            ServiceLaw::Erlang { shape, rate } => {
                let z = rate * x;
                let mut term = 1.0;
                let mut sum = 1.0;
                for j in 1..shape {
                    term *= z / f64::from(j);
                    sum += term;
                }
                (-z).exp() * sum
            }
            ServiceLaw::ParetoHazard { c0 } => (1.0 + x).powf(-c0),
        }
    }

    /// Hazard as an expression in `x`.
    pub fn hazard_of(&self) -> IntensityExpr {
        let text = match *self {
            ServiceLaw::Exponential { rate } => format!("{rate:?}"),
            ServiceLaw::Erlang { shape: 1, rate } => format!("{rate:?}"),
            ServiceLaw::Erlang { shape: 2, rate } => {
                format!("{rate:?}^2*x/(1+{rate:?}*x)")
            }
            ServiceLaw::Erlang { shape, rate } => {
                // rate (rate x)^(k-1)/(k-1)! / sum_{j<k} (rate x)^j / j!
                let mut fact = 1.0;
                let mut denom = String::from("1");
                for j in 1..shape {
                    fact *= f64::from(j);
                    denom.push_str(&format!("+({rate:?}*x)^{j}/{fact:?}"));
                }
                format!("{rate:?}*({rate:?}*x)^{}/{fact:?}/({denom})", shape - 1)
            }
            ServiceLaw::ParetoHazard { c0 } => format!("{c0:?}/(1+x)"),
        };
        parse_intensity(&text).expect("generated hazard parses")
    }

    /// Supremum of the hazard over `x >= 0`.
    pub fn hazard_sup(&self) -> f64 {
        match *self {
            ServiceLaw::Exponential { rate } | ServiceLaw::Erlang { rate, .. } => rate,
            ServiceLaw::ParetoHazard { c0 } => c0,
        }
    }
}

/// Pollaczek–Khinchine mean number in system,
/// `rho + rho^2 (1 + scv) / (2 (1 - rho))`.
pub fn pk_mean_number(lambda: f64, law: &ServiceLaw) -> Result<f64, OracleError> {
    let rho = lambda * law.mean();
    if !(rho < 1.0) {
        return Err(OracleError::Unstable { rho });
    }
    Ok(rho + rho * rho * (1.0 + law.scv()) / (2.0 * (1.0 - rho)))
}
