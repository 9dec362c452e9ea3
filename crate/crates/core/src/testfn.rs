//! Test functions for the generator, each carrying its exact partials.
//!
//! Dynkin checks need `f`, `df/dx` and `df/dy` (and `df/dt` for the
//! time-dependent form). Closed-form partials keep differentiation error out
//! of those checks; [`FiniteDifference`] is there for cross-checking them.

use crate::state::{lyapunov_l, StateX};

pub trait TestFunction: Send + Sync {
    fn value(&self, s: &StateX) -> f64;
    fn dx(&self, s: &StateX) -> f64;
    fn dy(&self, s: &StateX) -> f64;
}

pub trait TimeTestFunction: Send + Sync {
    fn value(&self, t: f64, s: &StateX) -> f64;
    fn dt(&self, t: f64, s: &StateX) -> f64;
    fn dx(&self, t: f64, s: &StateX) -> f64;
    fn dy(&self, t: f64, s: &StateX) -> f64;
}

impl<T: TestFunction + ?Sized> TestFunction for &T {
    fn value(&self, s: &StateX) -> f64 {
        (**self).value(s)
    }
    fn dx(&self, s: &StateX) -> f64 {
        (**self).dx(s)
    }
    fn dy(&self, s: &StateX) -> f64 {
        (**self).dy(s)
    }
}

impl<T: TestFunction + ?Sized> TestFunction for Box<T> {
    fn value(&self, s: &StateX) -> f64 {
        (**self).value(s)
    }
    fn dx(&self, s: &StateX) -> f64 {
        (**self).dx(s)
    }
    fn dy(&self, s: &StateX) -> f64 {
        (**self).dy(s)
    }
}

impl<T: TimeTestFunction + ?Sized> TimeTestFunction for Box<T> {
    fn value(&self, t: f64, s: &StateX) -> f64 {
        (**self).value(t, s)
    }
    fn dt(&self, t: f64, s: &StateX) -> f64 {
        (**self).dt(t, s)
    }
    fn dx(&self, t: f64, s: &StateX) -> f64 {
        (**self).dx(t, s)
    }
    fn dy(&self, t: f64, s: &StateX) -> f64 {
        (**self).dy(t, s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl TestFunction for Constant {
    fn value(&self, _: &StateX) -> f64 {
        self.0
    }
    fn dx(&self, _: &StateX) -> f64 {
        0.0
    }
    fn dy(&self, _: &StateX) -> f64 {
        0.0
    }
}

/// `cx * x + cy * y`.
#[derive(Debug, Clone, Copy)]
pub struct LinearClocks {
    pub cx: f64,
    pub cy: f64,
}

impl TestFunction for LinearClocks {
    fn value(&self, s: &StateX) -> f64 {
        self.cx * s.x + self.cy * s.y
    }
    fn dx(&self, _: &StateX) -> f64 {
        self.cx
    }
    fn dy(&self, _: &StateX) -> f64 {
        self.cy
    }
}

/// `L_m(X) = (n + 1 + x + y)^m`.
#[derive(Debug, Clone, Copy)]
pub struct Lyapunov {
    pub m: u32,
}

impl TestFunction for Lyapunov {
    fn value(&self, s: &StateX) -> f64 {
        lyapunov_l(s, self.m)
    }
    fn dx(&self, s: &StateX) -> f64 {
        f64::from(self.m) * s.weight().powi(self.m as i32 - 1)
    }
    fn dy(&self, s: &StateX) -> f64 {
        self.dx(s)
    }
}

/// C¹ saturation: identity up to `cap / 2`, a quadratic blend on
/// `[cap / 2, 3 cap / 2]`, and constant `cap` beyond.
#[derive(Debug, Clone, Copy)]
pub struct SmoothCap {
    pub cap: f64,
}

impl SmoothCap {
    pub fn apply(&self, v: f64) -> f64 {
        let c = self.cap;
        if v <= 0.5 * c {
            v
        } else if v >= 1.5 * c {
            c
        } else {
            let d = v - 0.5 * c;
            v - d * d / (2.0 * c)
        }
    }

    pub fn slope(&self, v: f64) -> f64 {
        let c = self.cap;
        if v <= 0.5 * c {
            1.0
        } else if v >= 1.5 * c {
            0.0
        } else {
            1.0 - (v - 0.5 * c) / c
        }
    }
}

/// A state test function passed through [`SmoothCap`].
#[derive(Debug, Clone, Copy)]
pub struct Capped<F> {
    pub inner: F,
    pub cap: SmoothCap,
}

impl<F> Capped<F> {
    pub fn new(inner: F, cap: f64) -> Self {
        Self {
            inner,
            cap: SmoothCap { cap },
        }
    }
}

impl<F: TestFunction> TestFunction for Capped<F> {
    fn value(&self, s: &StateX) -> f64 {
        self.cap.apply(self.inner.value(s))
    }
    fn dx(&self, s: &StateX) -> f64 {
        self.cap.slope(self.inner.value(s)) * self.inner.dx(s)
    }
    fn dy(&self, s: &StateX) -> f64 {
        self.cap.slope(self.inner.value(s)) * self.inner.dy(s)
    }
}

impl<F: TimeTestFunction> TimeTestFunction for Capped<F> {
    fn value(&self, t: f64, s: &StateX) -> f64 {
        self.cap.apply(self.inner.value(t, s))
    }
    fn dt(&self, t: f64, s: &StateX) -> f64 {
        self.cap.slope(self.inner.value(t, s)) * self.inner.dt(t, s)
    }
    fn dx(&self, t: f64, s: &StateX) -> f64 {
        self.cap.slope(self.inner.value(t, s)) * self.inner.dx(t, s)
    }
    fn dy(&self, t: f64, s: &StateX) -> f64 {
        self.cap.slope(self.inner.value(t, s)) * self.inner.dy(t, s)
    }
}

/// `L_{k,m}(t, X) = (1 + t)^k L_m(X)`.
#[derive(Debug, Clone, Copy)]
pub struct TimeLyapunov {
    pub k: u32,
    pub m: u32,
}

impl TimeTestFunction for TimeLyapunov {
    fn value(&self, t: f64, s: &StateX) -> f64 {
        (1.0 + t).powi(self.k as i32) * lyapunov_l(s, self.m)
    }
    fn dt(&self, t: f64, s: &StateX) -> f64 {
        if self.k == 0 {
            return 0.0;
        }
        f64::from(self.k) * (1.0 + t).powi(self.k as i32 - 1) * lyapunov_l(s, self.m)
    }
    fn dx(&self, t: f64, s: &StateX) -> f64 {
        (1.0 + t).powi(self.k as i32) * Lyapunov { m: self.m }.dx(s)
    }
    fn dy(&self, t: f64, s: &StateX) -> f64 {
        self.dx(t, s)
    }
}

/// `(1 + t)^k`, independent of the state.
#[derive(Debug, Clone, Copy)]
pub struct TimePower {
    pub k: u32,
}

impl TimeTestFunction for TimePower {
    fn value(&self, t: f64, _: &StateX) -> f64 {
        (1.0 + t).powi(self.k as i32)
    }
    fn dt(&self, t: f64, _: &StateX) -> f64 {
        if self.k == 0 {
            0.0
        } else {
            f64::from(self.k) * (1.0 + t).powi(self.k as i32 - 1)
        }
    }
    fn dx(&self, _: f64, _: &StateX) -> f64 {
        0.0
    }
    fn dy(&self, _: f64, _: &StateX) -> f64 {
        0.0
    }
}

/// Lifts a state function to a time-state function constant in `t`.
#[derive(Debug, Clone, Copy)]
pub struct Static<F>(pub F);

impl<F: TestFunction> TimeTestFunction for Static<F> {
    fn value(&self, _: f64, s: &StateX) -> f64 {
        self.0.value(s)
    }
    fn dt(&self, _: f64, _: &StateX) -> f64 {
        0.0
    }
    fn dx(&self, _: f64, s: &StateX) -> f64 {
        self.0.dx(s)
    }
    fn dy(&self, _: f64, s: &StateX) -> f64 {
        self.0.dy(s)
    }
}

/// Central differences with step `1e-6` around an arbitrary closure.
pub struct FiniteDifference<F> {
    pub f: F,
    pub step: f64,
}

impl<F: Fn(&StateX) -> f64> FiniteDifference<F> {
    pub fn new(f: F) -> Self {
        Self { f, step: 1e-6 }
    }
}

impl<F: Fn(&StateX) -> f64 + Send + Sync> TestFunction for FiniteDifference<F> {
    fn value(&self, s: &StateX) -> f64 {
        (self.f)(s)
    }
    fn dx(&self, s: &StateX) -> f64 {
        let h = self.step;
        let hi = StateX { x: s.x + h, ..*s };
        let lo = StateX { x: s.x - h, ..*s };
        ((self.f)(&hi) - (self.f)(&lo)) / (2.0 * h)
    }
    fn dy(&self, s: &StateX) -> f64 {
        let h = self.step;
        let hi = StateX { y: s.y + h, ..*s };
        let lo = StateX { y: s.y - h, ..*s };
        ((self.f)(&hi) - (self.f)(&lo)) / (2.0 * h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_is_c1() {
        let cap = SmoothCap { cap: 10.0 };
        assert_eq!(cap.apply(3.0), 3.0);
        assert_eq!(cap.apply(5.0), 5.0);
        assert!((cap.apply(15.0) - 10.0).abs() < 1e-12);
        assert_eq!(cap.apply(40.0), 10.0);
        for v in [4.9, 5.0, 5.1, 9.0, 14.9, 15.0, 15.1] {
            let h = 1e-6;
            let fd = (cap.apply(v + h) - cap.apply(v - h)) / (2.0 * h);
            assert!((fd - cap.slope(v)).abs() < 1e-5, "v = {v}");
        }
    }

    #[test]
    fn closed_form_partials_match_finite_differences() {
        let s = StateX {
            n: 3,
            x: 1.25,
            y: 0.4,
        };
        let exact = Capped::new(Lyapunov { m: 2 }, 30.0);
        let fd = FiniteDifference::new(|s: &StateX| exact.value(s));
        assert!((exact.dx(&s) - fd.dx(&s)).abs() < 1e-6);
        assert!((exact.dy(&s) - fd.dy(&s)).abs() < 1e-6);

        let tl = TimeLyapunov { k: 1, m: 2 };
        let h = 1e-6;
        let fdt = (tl.value(2.0 + h, &s) - tl.value(2.0 - h, &s)) / (2.0 * h);
        assert!((tl.dt(2.0, &s) - fdt).abs() < 1e-5);
    }
}
