//! Arrival and service intensities, the quantities derived from them along
//! the deterministic flow, the generator, and grid checks of the standing
//! assumptions on the intensities.

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, FieldError, QuadratureError};
use crate::expr::{IntensityExpr, Var};
use crate::quadrature;
use crate::state::StateX;
use crate::testfn::{TestFunction, TimeTestFunction};

/// Which hazard to integrate along a flow segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Arrival,
    Service,
    Total,
}

/// Arrival intensity `lambda(n, x, y)` for `n > 0`, idle arrival rate
/// `lambda0(y)`, service intensity `h(n, x, y)` (zero when idle) and
/// declared upper bounds used by the thinning sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityField {
    lambda: IntensityExpr,
    h: IntensityExpr,
    lambda0: Option<IntensityExpr>,
    lambda_sup: f64,
    h_sup: f64,
}

impl IntensityField {
    /// When `lambda0` is `None` the idle rate is `lambda(0, 0, y)`.
    pub fn new(
        lambda: IntensityExpr,
        h: IntensityExpr,
        lambda0: Option<IntensityExpr>,
        lambda_sup: f64,
        h_sup: f64,
    ) -> Result<Self, FieldError> {
        for (name, value) in [("lambda_sup", lambda_sup), ("h_sup", h_sup)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(FieldError::BadBound { name, value });
            }
        }
        if let Some(l0) = &lambda0 {
            if l0.depends_on(Var::N) || l0.depends_on(Var::X) {
                return Err(FieldError::IdleRateDependsOnState);
            }
        }
        Ok(Self {
            lambda,
            h,
            lambda0,
            lambda_sup,
            h_sup,
        })
    }

    pub fn from_strs(
        lambda: &str,
        h: &str,
        lambda0: Option<&str>,
        lambda_sup: f64,
        h_sup: f64,
    ) -> Result<Self, FieldError> {
        let lambda0 = lambda0.map(str::parse).transpose()?;
        Self::new(lambda.parse()?, h.parse()?, lambda0, lambda_sup, h_sup)
    }

    /// Constant rates; the bounds are the rates themselves (or 1 for a zero
    /// rate, since bounds must be positive).
    pub fn constant(lambda: f64, h: f64) -> Self {
        let sup = |v: f64| if v > 0.0 { v } else { 1.0 };
        Self::new(
            IntensityExpr::constant(lambda),
            IntensityExpr::constant(h),
            None,
            sup(lambda),
            sup(h),
        )
        .expect("constant field")
    }

    pub fn lambda(&self) -> &IntensityExpr {
        &self.lambda
    }

    pub fn h(&self) -> &IntensityExpr {
        &self.h
    }

    pub fn lambda0(&self) -> Option<&IntensityExpr> {
        self.lambda0.as_ref()
    }

    pub fn lambda_sup(&self) -> f64 {
        self.lambda_sup
    }

    pub fn h_sup(&self) -> f64 {
        self.h_sup
    }

    /// Dominating rate for thinning.
    pub fn bound(&self) -> f64 {
        self.lambda_sup + self.h_sup
    }

    /// `lambda0(y)`.
    pub fn idle_rate(&self, y: f64) -> Result<f64, EvalError> {
        let v = match &self.lambda0 {
            Some(l0) => l0.eval_raw(0.0, 0.0, y),
            None => self.lambda.eval_raw(0.0, 0.0, y),
        };
        check(StateX::idle(y), v)
    }

    pub fn arrival_rate(&self, s: &StateX) -> Result<f64, EvalError> {
        if s.n == 0 {
            return self.idle_rate(s.y);
        }
        check(*s, self.lambda.eval(s))
    }

    pub fn service_rate(&self, s: &StateX) -> Result<f64, EvalError> {
        if s.n == 0 {
            return Ok(0.0);
        }
        check(*s, self.h.eval(s))
    }

    #[inline]
    pub fn rates(&self, s: &StateX) -> Result<(f64, f64), EvalError> {
        Ok((self.arrival_rate(s)?, self.service_rate(s)?))
    }

    /// `lambda + h` at `s`; equals `lambda0(y)` when idle.
    pub fn total_hazard(&self, s: &StateX) -> Result<f64, EvalError> {
        let (a, b) = self.rates(s)?;
        Ok(a + b)
    }

    /// Guard flip points of the active expressions along `u -> s.flow(u)`.
    pub fn breakpoints(&self, s: &StateX, u0: f64, u1: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if s.n == 0 {
            self.lambda0
                .as_ref()
                .unwrap_or(&self.lambda)
                .breakpoints_along_flow(s, u0, u1, &mut out);
        } else {
            self.lambda.breakpoints_along_flow(s, u0, u1, &mut out);
            self.h.breakpoints_along_flow(s, u0, u1, &mut out);
        }
        out.sort_by(f64::total_cmp);
        out
    }

    /// `int_{u0}^{u1} rate(s.flow(u)) du` for the chosen channel.
    pub fn integrated(
        &self,
        s: &StateX,
        u0: f64,
        u1: f64,
        channel: Channel,
    ) -> Result<f64, QuadratureError> {
        if u1 <= u0 {
            return Ok(0.0);
        }
        // constant rates along the segment integrate in closed form
        if self.is_constant_on(s) {
            let (a, b) = self.rates(s)?;
            let r = match channel {
                Channel::Arrival => a,
                Channel::Service => b,
                Channel::Total => a + b,
            };
            return Ok(r * (u1 - u0));
        }
        let bps = self.breakpoints(s, u0, u1);
        quadrature::integrate(
            |u| -> Result<f64, QuadratureError> {
                let z = s.flow(u);
                Ok(match channel {
                    Channel::Arrival => self.arrival_rate(&z)?,
                    Channel::Service => self.service_rate(&z)?,
                    Channel::Total => self.total_hazard(&z)?,
                })
            },
            u0,
            u1,
            &bps,
        )
    }

    fn is_constant_on(&self, s: &StateX) -> bool {
        if s.n == 0 {
            return match &self.lambda0 {
                Some(l0) => !l0.depends_on(Var::Y),
                None => !self.lambda.depends_on(Var::Y),
            };
        }
        let still = |e: &IntensityExpr| !e.depends_on(Var::X) && !e.depends_on(Var::Y);
        still(&self.lambda) && still(&self.h)
    }

    /// Probability of no jump on `[0, delta]` from `s`.
    pub fn survival_probability(&self, s: &StateX, delta: f64) -> Result<f64, QuadratureError> {
        Ok((-self.integrated(s, 0.0, delta, Channel::Total)?).exp())
    }

    /// Density of the first jump time at `z`.
    pub fn event_density(&self, s: &StateX, z: f64) -> Result<f64, QuadratureError> {
        let rate = self.total_hazard(&s.flow(z))?;
        if rate == 0.0 {
            return Ok(0.0);
        }
        Ok(rate * self.survival_probability(s, z)?)
    }

    /// `(G f)(s)`: transport along the clocks plus the two jump terms.
    pub fn generator_apply<F: TestFunction + ?Sized>(
        &self,
        s: &StateX,
        f: &F,
    ) -> Result<f64, EvalError> {
        let (lam, h) = self.rates(s)?;
        let here = f.value(s);
        let mut g = f.dy(s);
        if s.n > 0 {
            g += f.dx(s);
        }
        if lam != 0.0 {
            g += lam * (f.value(&s.jump_up()) - here);
        }
        if h != 0.0 {
            g += h * (f.value(&s.jump_down()) - here);
        }
        Ok(g)
    }

    /// `(d/dt + G) phi(t, .)` at `(t, s)`.
    pub fn generator_apply_time<F: TimeTestFunction + ?Sized>(
        &self,
        t: f64,
        s: &StateX,
        phi: &F,
    ) -> Result<f64, EvalError> {
        let (lam, h) = self.rates(s)?;
        let here = phi.value(t, s);
        let mut g = phi.dt(t, s) + phi.dy(t, s);
        if s.n > 0 {
            g += phi.dx(t, s);
        }
        if lam != 0.0 {
            g += lam * (phi.value(t, &s.jump_up()) - here);
        }
        if h != 0.0 {
            g += h * (phi.value(t, &s.jump_down()) - here);
        }
        Ok(g)
    }

    /// Evaluates the intensities on a grid and reports the boundedness,
    /// service-hazard and idle-arrival conditions.
    pub fn validate_conditions(&self, grid: &GridSpec) -> ConditionReport {
        let clocks = grid.clock_points();
        let mut errors = Vec::new();
        let mut note = |e: EvalError| {
            if errors.len() < 10 {
                errors.push(e.to_string());
            }
        };

        let mut lambda_grid_sup = 0.0f64;
        let mut h_grid_sup = 0.0f64;
        let mut c0 = f64::INFINITY;
        for n in 1..=grid.n_max {
            for &x in &clocks {
                for &y in &clocks {
                    let s = StateX { n, x, y };
                    match self.rates(&s) {
                        Ok((lam, h)) => {
                            lambda_grid_sup = lambda_grid_sup.max(lam);
                            h_grid_sup = h_grid_sup.max(h);
                            c0 = c0.min(h * (1.0 + x));
                        }
                        Err(e) => note(e),
                    }
                }
            }
        }

        let mut l0_inf = f64::INFINITY;
        let mut l0_sup = 0.0f64;
        let mut c0_prime = f64::INFINITY;
        for &y in &clocks {
            match self.idle_rate(y) {
                Ok(v) => {
                    l0_inf = l0_inf.min(v);
                    l0_sup = l0_sup.max(v);
                    c0_prime = c0_prime.min(v * (1.0 + y));
                }
                Err(e) => note(e),
            }
        }
        lambda_grid_sup = lambda_grid_sup.max(l0_sup);

        let tol = 1e-12;
        let boundedness_ok = lambda_grid_sup <= self.lambda_sup * (1.0 + tol)
            && h_grid_sup <= self.h_sup * (1.0 + tol);
        let c0_estimate = if c0.is_finite() { c0.max(0.0) } else { 0.0 };
        let service_hazard_ok = c0_estimate > 0.0;
        let idle_arrival_ok = l0_inf > 0.0 && l0_sup.is_finite();
        ConditionReport {
            boundedness_ok,
            lambda_sup_declared: self.lambda_sup,
            lambda_sup_grid: lambda_grid_sup,
            h_sup_declared: self.h_sup,
            h_sup_grid: h_grid_sup,
            c0_estimate,
            service_hazard_ok,
            lambda0_inf: if l0_inf.is_finite() { l0_inf } else { 0.0 },
            lambda0_sup: l0_sup,
            idle_arrival_ok,
            idle_arrival_weak_c0: c0_prime.is_finite().then_some(c0_prime),
            domain_errors: errors,
            grid: grid.clone(),
        }
    }
}

fn check(state: StateX, value: f64) -> Result<f64, EvalError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(EvalError::Domain { state, value })
    }
}

/// Grid for condition checks: `n` in `0..=n_max`; `x` and `y` share points
/// `0, s, s(1+g), ...` with step `s` growing by factor `g`, up to `t_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_max: u32,
    pub t_max: f64,
    pub first_step: f64,
    pub growth: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_max: 50,
            t_max: 100.0,
            first_step: 0.01,
            growth: 1.1,
        }
    }
}

impl GridSpec {
    pub fn clock_points(&self) -> Vec<f64> {
        let mut pts = vec![0.0];
        let mut step = self.first_step;
        let mut v = 0.0;
        loop {
            v += step;
            if v >= self.t_max {
                pts.push(self.t_max);
                break;
            }
            pts.push(v);
            step *= self.growth.max(1.0);
        }
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub boundedness_ok: bool,
    pub lambda_sup_declared: f64,
    pub lambda_sup_grid: f64,
    pub h_sup_declared: f64,
    pub h_sup_grid: f64,
    /// Largest `C0` with `h(n, x, y) >= C0 / (1 + x)` on the busy grid.
    pub c0_estimate: f64,
    pub service_hazard_ok: bool,
    pub lambda0_inf: f64,
    pub lambda0_sup: f64,
    pub idle_arrival_ok: bool,
    /// Largest `C0'` with `lambda0(y) >= C0' / (1 + y)` on the grid.
    pub idle_arrival_weak_c0: Option<f64>,
    pub domain_errors: Vec<String>,
    pub grid: GridSpec,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.boundedness_ok && self.service_hazard_ok && self.idle_arrival_ok && self.domain_errors.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfn::{Constant, Lyapunov};

    fn field(lambda: &str, h: &str, sup_l: f64, sup_h: f64) -> IntensityField {
        IntensityField::from_strs(lambda, h, None, sup_l, sup_h).unwrap()
    }

    #[test]
    fn total_hazard_examples() {
        let f = IntensityField::constant(1.0, 2.0);
        assert_eq!(
            f.total_hazard(&StateX {
                n: 1,
                x: 0.0,
                y: 0.0
            })
            .unwrap(),
            3.0
        );
        assert_eq!(f.total_hazard(&StateX::idle(5.0)).unwrap(), 1.0);
        let f = field("1", "6/(1+x)", 1.0, 6.0);
        assert_eq!(
            f.total_hazard(&StateX {
                n: 2,
                x: 1.0,
                y: 0.0
            })
            .unwrap(),
            4.0
        );
    }

    #[test]
    fn survival_examples() {
        let f = IntensityField::constant(1.0, 2.0);
        let s = StateX {
            n: 1,
            x: 0.0,
            y: 0.0,
        };
        assert!((f.survival_probability(&s, 1.0).unwrap() - (-3.0f64).exp()).abs() < 1e-10);
        assert_eq!(f.survival_probability(&s, 0.0).unwrap(), 1.0);
        let g = field("0", "2/(1+x)", 1.0, 2.0);
        assert!((g.survival_probability(&s, 1.0).unwrap() - 0.25).abs() < 1e-10);
        // step in x at x = 1: 0.5 on [0.3, 1], 3 after
        let d = field("if_gt(x, 1, 3, 0.5)", "1", 3.0, 1.0);
        let s = StateX {
            n: 1,
            x: 0.3,
            y: 0.0,
        };
        let want = (-(0.7 * 1.5 + 1.3 * 4.0f64)).exp();
        assert!((d.survival_probability(&s, 2.0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn density_examples() {
        let f = IntensityField::constant(1.0, 2.0);
        let s = StateX {
            n: 1,
            x: 0.0,
            y: 0.0,
        };
        assert!((f.event_density(&s, 0.0).unwrap() - 3.0).abs() < 1e-12);
        assert!((f.event_density(&s, 1.0).unwrap() - 3.0 * (-3.0f64).exp()).abs() < 1e-10);
        let null = field("0", "0", 1.0, 1.0);
        for z in [0.0, 0.5, 7.0] {
            assert_eq!(null.event_density(&s, z).unwrap(), 0.0);
        }
    }

    #[test]
    fn density_integrates_to_one_for_nonvanishing_hazard() {
        let f = field("0.5", "6/(1+x)", 0.5, 6.0);
        let s = StateX {
            n: 2,
            x: 0.2,
            y: 0.0,
        };
        let mass = quadrature::integrate(
            |z| -> Result<f64, QuadratureError> { f.event_density(&s, z) },
            0.0,
            80.0,
            &[],
        )
        .unwrap();
        assert!((mass - 1.0).abs() < 1e-8, "mass = {mass}");
    }

    #[test]
    fn service_vanishes_when_idle() {
        let f = field("1", "2 + x + y", 1.0, 500.0);
        assert_eq!(f.service_rate(&StateX::idle(3.0)).unwrap(), 0.0);
    }

    #[test]
    fn generator_examples() {
        let f = IntensityField::constant(1.0, 2.0);
        for s in [
            StateX {
                n: 0,
                x: 0.0,
                y: 2.0,
            },
            StateX {
                n: 4,
                x: 1.0,
                y: 0.5,
            },
        ] {
            assert_eq!(f.generator_apply(&s, &Constant(3.0)).unwrap(), 0.0);
        }
        let s = StateX {
            n: 1,
            x: 0.5,
            y: 0.2,
        };
        let g = f.generator_apply(&s, &Lyapunov { m: 1 }).unwrap();
        assert!((g - (-0.2)).abs() < 1e-12, "G L1 = {g}");
        let f = field("1", "0", 1.0, 1.0);
        let g = f
            .generator_apply(&StateX::idle(0.0), &Lyapunov { m: 1 })
            .unwrap();
        assert!((g - 2.0).abs() < 1e-12);
    }

    #[test]
    fn domain_errors_are_reported() {
        let f = field("1 - x", "1", 1.0, 1.0);
        let err = f
            .arrival_rate(&StateX {
                n: 1,
                x: 2.0,
                y: 0.0,
            })
            .unwrap_err();
        assert!(matches!(err, EvalError::Domain { value, .. } if value == -1.0));
        let f = field("1/(x - 1)", "1", 1.0, 1.0);
        assert!(f
            .arrival_rate(&StateX {
                n: 1,
                x: 1.0,
                y: 0.0
            })
            .is_err());
    }

    #[test]
    fn idle_rate_must_depend_on_y_only() {
        let err = IntensityField::from_strs("1", "1", Some("1 + n"), 1.0, 1.0).unwrap_err();
        assert_eq!(err, FieldError::IdleRateDependsOnState);
        assert!(IntensityField::from_strs("1", "1", None, 0.0, 1.0).is_err());
    }

    #[test]
    fn validate_examples() {
        let grid = GridSpec {
            n_max: 5,
            ..GridSpec::default()
        };
        let r = IntensityField::constant(1.0, 2.0).validate_conditions(&grid);
        assert!(r.passed());
        assert_eq!(r.c0_estimate, 2.0);
        assert_eq!((r.lambda0_inf, r.lambda0_sup), (1.0, 1.0));

        let r = field("1", "6/(1+x)", 1.0, 6.0).validate_conditions(&grid);
        assert!(r.passed());
        assert!((r.c0_estimate - 6.0).abs() < 1e-12);

        let f = IntensityField::from_strs("1", "2", Some("0"), 1.0, 2.0).unwrap();
        let r = f.validate_conditions(&grid);
        assert!(!r.idle_arrival_ok);
        assert!(!r.passed());

        // declared bound too small
        let r = field("1 + min(n, 3)*0.1", "2", 1.2, 2.0).validate_conditions(&grid);
        assert!(!r.boundedness_ok);
        assert!((r.lambda_sup_grid - 1.3).abs() < 1e-12);

        // faster decay than 1/(1+x) only shows up as a small C0 on a finite grid
        let r = field("1", "1/(1+x)^2", 1.0, 1.0).validate_conditions(&grid);
        assert!((r.c0_estimate - 1.0 / 101.0).abs() < 1e-12);

        // a service hazard that switches off has no positive C0
        let r = field("1", "if_gt(x, 5, 0, 1)", 1.0, 1.0).validate_conditions(&grid);
        assert!(!r.service_hazard_ok);
        assert_eq!(r.c0_estimate, 0.0);
        assert!(r.lambda0_inf <= r.lambda0_sup);
    }

    #[test]
    fn grid_points() {
        let pts = GridSpec::default().clock_points();
        assert_eq!(pts[0], 0.0);
        assert_eq!(pts[1], 0.01);
        assert_eq!(*pts.last().unwrap(), 100.0);
        assert!(pts.windows(2).all(|w| w[1] > w[0]));
    }
}
