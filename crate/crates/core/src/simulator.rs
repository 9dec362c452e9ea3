//! Exact simulation of the queue process.
//!
//! Between jumps the state follows [`StateX::flow`]. Jump times are drawn by
//! thinning a dominating Poisson stream of rate `lambda_sup + h_sup`, or by
//! inverting the integrated hazard (slow, used as an independent oracle), or
//! by thinning the two channels separately and taking the earlier candidate.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

use crate::error::{QuadratureError, SimError};
use crate::expr::IntensityExpr;
use crate::intensity::{Channel, IntensityField};
use crate::quadrature;
use crate::rng::{ReplicaRng, SeedSpec};
use crate::state::StateX;

/// Consecutive rejected proposals before the thinning sampler gives up.
pub const MAX_PROPOSALS: u64 = 1_000_000_000;
/// Inversion looks this far ahead for the first jump.
pub const INVERSION_HORIZON: f64 = 1e6;
/// Default censoring cap for hitting times.
pub const DEFAULT_HITTING_CAP: f64 = 1e6;
/// Default cap on a single regeneration cycle.
pub const DEFAULT_CYCLE_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Arrival,
    ServiceEnd,
}

impl EventKind {
    pub fn apply(self, s: &StateX) -> StateX {
        match self {
            EventKind::Arrival => s.jump_up(),
            EventKind::ServiceEnd => s.jump_down(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::ServiceEnd => "service_end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    #[default]
    Thinning,
    Inversion,
    /// Independent thinning per channel; the earlier candidate wins.
    Competing,
}

impl std::str::FromStr for Sampler {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "thinning" => Ok(Sampler::Thinning),
            "inversion" => Ok(Sampler::Inversion),
            "competing" => Ok(Sampler::Competing),
            other => Err(format!("unknown sampler `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NextJump {
    pub dt: f64,
    pub kind: EventKind,
}

fn pick_kind(field: &IntensityField, s: &StateX, u: f64) -> Result<Option<EventKind>, SimError> {
    let (lam, h) = field.rates(s)?;
    let total = lam + h;
    let bound = field.bound();
    if total > bound * (1.0 + 1e-9) {
        return Err(SimError::BoundViolated {
            state: *s,
            rate: total,
            bound,
        });
    }
    let v = u * bound;
    Ok(if v < lam {
        Some(EventKind::Arrival)
    } else if v < total {
        Some(EventKind::ServiceEnd)
    } else {
        None
    })
}

/// Next jump from `s` by thinning, looking no further than `limit`.
/// `Ok(None)` means no jump in `(0, limit]`.
pub fn next_event_thinning_within<R: Rng + ?Sized>(
    field: &IntensityField,
    s: &StateX,
    rng: &mut R,
    limit: f64,
) -> Result<Option<NextJump>, SimError> {
    let exp = Exp::new(field.bound()).expect("positive bound");
    let mut t = 0.0;
    let mut proposals = 0u64;
    loop {
        t += exp.sample(rng);
        if t > limit {
            return Ok(None);
        }
        let u: f64 = rng.random();
        if let Some(kind) = pick_kind(field, &s.flow(t), u)? {
            return Ok(Some(NextJump { dt: t, kind }));
        }
        proposals += 1;
        if proposals >= MAX_PROPOSALS {
            return Err(SimError::Stall {
                state: *s,
                proposals,
            });
        }
    }
}

/// Next jump from `s` by thinning against `lambda_sup + h_sup`.
pub fn next_event_thinning<R: Rng + ?Sized>(
    field: &IntensityField,
    s: &StateX,
    rng: &mut R,
) -> Result<NextJump, SimError> {
    next_event_thinning_within(field, s, rng, f64::INFINITY)
        .map(|j| j.expect("unbounded search returns a jump or stalls"))
}

/// Next jump from `s` by inverting `1 - survival(z) = u`; the kind is drawn
/// with `u_kind` in proportion to the channel rates at the jump time.
/// `Ok(None)` when the total jump probability within [`INVERSION_HORIZON`]
/// is below `u` (censored).
pub fn next_event_inversion(
    field: &IntensityField,
    s: &StateX,
    u: f64,
    u_kind: f64,
) -> Result<Option<NextJump>, SimError> {
    let target = -(-u).ln_1p();
    if target <= 0.0 {
        return Ok(Some(NextJump {
            dt: 0.0,
            kind: kind_at(field, s, 0.0, u_kind)?,
        }));
    }
    let total = |a: f64, b: f64| field.integrated(s, a, b, Channel::Total);

    // bracket: the integrated hazard grows at most at rate `bound`
    let (mut lo, mut h_lo) = (0.0, 0.0);
    let mut hi = (target / field.bound()).max(f64::MIN_POSITIVE);
    loop {
        let capped = hi.min(INVERSION_HORIZON);
        let h_hi = h_lo + total(lo, capped)?;
        if h_hi >= target {
            hi = capped;
            break;
        }
        if capped >= INVERSION_HORIZON {
            return Ok(None);
        }
        lo = capped;
        h_lo = h_hi;
        hi = capped * 2.0;
    }
    let tol = |x: f64| 1e-10f64.max(8.0 * f64::EPSILON * x);
    while hi - lo > tol(hi) {
        let mid = 0.5 * (lo + hi);
        let h_mid = h_lo + total(lo, mid)?;
        if h_mid >= target {
            hi = mid;
        } else {
            lo = mid;
            h_lo = h_mid;
        }
    }
    Ok(Some(NextJump {
        dt: hi,
        kind: kind_at(field, s, hi, u_kind)?,
    }))
}

fn kind_at(field: &IntensityField, s: &StateX, dt: f64, u: f64) -> Result<EventKind, SimError> {
    let mut z = s.flow(dt);
    let (mut lam, mut h) = field.rates(&z)?;
    if lam + h == 0.0 && dt > 0.0 {
        // the hazard switched off exactly at the jump; use the left limit
        z = s.flow(dt * (1.0 - 1e-12));
        (lam, h) = field.rates(&z)?;
    }
    Ok(if u * (lam + h) < lam {
        EventKind::Arrival
    } else {
        EventKind::ServiceEnd
    })
}

fn next_event_competing<R: Rng + ?Sized>(
    field: &IntensityField,
    s: &StateX,
    rng: &mut R,
    limit: f64,
) -> Result<Option<NextJump>, SimError> {
    let channel = |sup: f64, rng: &mut R, rate: &dyn Fn(&StateX) -> Result<f64, SimError>| {
        let exp = Exp::new(sup).expect("positive bound");
        let mut t = 0.0;
        let mut proposals = 0u64;
        loop {
            t += exp.sample(rng);
            if t > limit {
                return Ok::<_, SimError>(None);
            }
            proposals += 1;
            if proposals >= MAX_PROPOSALS {
                return Err(SimError::Stall {
                    state: *s,
                    proposals,
                });
            }
            let z = s.flow(t);
            let r = rate(&z)?;
            if r > sup * (1.0 + 1e-9) {
                return Err(SimError::BoundViolated {
                    state: z,
                    rate: r,
                    bound: sup,
                });
            }
            if rng.random::<f64>() * sup < r {
                return Ok(Some(t));
            }
        }
    };
    let up = channel(field.lambda_sup(), rng, &|z| Ok(field.arrival_rate(z)?))?;
    let down = if s.n > 0 {
        channel(field.h_sup(), rng, &|z| Ok(field.service_rate(z)?))?
    } else {
        None
    };
    Ok(match (up, down) {
        (Some(a), Some(d)) if d < a => Some(NextJump {
            dt: d,
            kind: EventKind::ServiceEnd,
        }),
        (Some(a), _) => Some(NextJump {
            dt: a,
            kind: EventKind::Arrival,
        }),
        (None, Some(d)) => Some(NextJump {
            dt: d,
            kind: EventKind::ServiceEnd,
        }),
        (None, None) => None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEvent {
    pub t: f64,
    pub kind: EventKind,
    pub state_after: StateX,
}

#[derive(Debug, Clone, Copy)]
enum Pending {
    /// Next point of the dominating Poisson stream.
    Proposal(f64),
    /// Pre-drawn jump (inversion).
    Jump(f64, EventKind),
    /// Inversion found no jump before this time; redraw there.
    Redraw(f64),
}

/// Steps one replica forward in time. The realisation does not depend on
/// how the time axis is chopped into `advance` calls.
pub struct PathWalker<'a> {
    field: &'a IntensityField,
    sampler: Sampler,
    rng: ReplicaRng,
    exp: Exp<f64>,
    t: f64,
    state: StateX,
    pending: Option<Pending>,
}

impl<'a> PathWalker<'a> {
    pub fn new(field: &'a IntensityField, start: StateX, seed: SeedSpec, sampler: Sampler) -> Self {
        Self::with_rng(field, start, seed.rng(), sampler)
    }

    pub fn with_rng(
        field: &'a IntensityField,
        start: StateX,
        rng: ReplicaRng,
        sampler: Sampler,
    ) -> Self {
        Self {
            field,
            sampler,
            rng,
            exp: Exp::new(field.bound()).expect("positive bound"),
            t: 0.0,
            state: start,
            pending: None,
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> StateX {
        self.state
    }

    pub fn rng_mut(&mut self) -> &mut ReplicaRng {
        &mut self.rng
    }

    fn move_to(&mut self, t: f64) {
        if t > self.t {
            self.state = self.state.flow(t - self.t);
            self.t = t;
        }
    }

    fn jump(&mut self, t: f64, kind: EventKind) -> PathEvent {
        self.move_to(t);
        self.state = kind.apply(&self.state);
        PathEvent {
            t,
            kind,
            state_after: self.state,
        }
    }

    /// Advances to the next jump if it occurs at or before `until`;
    /// otherwise flows to `until` and returns `None`.
    pub fn advance(&mut self, until: f64) -> Result<Option<PathEvent>, SimError> {
        match self.sampler {
            Sampler::Thinning => self.advance_thinning(until),
            Sampler::Inversion => self.advance_inversion(until),
            Sampler::Competing => {
                let s = self.state;
                match next_event_competing(self.field, &s, &mut self.rng, until - self.t)? {
                    Some(j) => Ok(Some(self.jump(self.t + j.dt, j.kind))),
                    None => {
                        self.move_to(until);
                        Ok(None)
                    }
                }
            }
        }
    }

    fn advance_thinning(&mut self, until: f64) -> Result<Option<PathEvent>, SimError> {
        let mut rejected = 0u64;
        loop {
            let p = match self.pending {
                Some(Pending::Proposal(p)) => p,
                _ => {
                    let p = self.t + self.exp.sample(&mut self.rng);
                    self.pending = Some(Pending::Proposal(p));
                    p
                }
            };
            if p > until {
                self.move_to(until);
                return Ok(None);
            }
            self.pending = None;
            self.move_to(p);
            let u: f64 = self.rng.random();
            if let Some(kind) = pick_kind(self.field, &self.state, u)? {
                return Ok(Some(self.jump(p, kind)));
            }
            rejected += 1;
            if rejected >= MAX_PROPOSALS {
                return Err(SimError::Stall {
                    state: self.state,
                    proposals: rejected,
                });
            }
        }
    }

    fn advance_inversion(&mut self, until: f64) -> Result<Option<PathEvent>, SimError> {
        loop {
            let pending = match self.pending {
                Some(p) => p,
                None => {
                    let u: f64 = self.rng.random();
                    let u_kind: f64 = self.rng.random();
                    let p = match next_event_inversion(self.field, &self.state, u, u_kind)? {
                        Some(j) => Pending::Jump(self.t + j.dt, j.kind),
                        None => Pending::Redraw(self.t + INVERSION_HORIZON),
                    };
                    self.pending = Some(p);
                    p
                }
            };
            let at = match pending {
                Pending::Jump(at, _) | Pending::Redraw(at) | Pending::Proposal(at) => at,
            };
            if at > until {
                self.move_to(until);
                return Ok(None);
            }
            self.pending = None;
            match pending {
                Pending::Jump(at, kind) => return Ok(Some(self.jump(at, kind))),
                _ => self.move_to(at),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: StateX,
    pub events: Vec<PathEvent>,
    pub horizon: f64,
}

impl Trajectory {
    /// State at time `t` in `[0, horizon]`: the last jump before `t`, flowed.
    pub fn state_at(&self, t: f64) -> StateX {
        let idx = self.events.partition_point(|e| e.t <= t);
        match idx {
            0 => self.initial.flow(t),
            i => {
                let e = &self.events[i - 1];
                e.state_after.flow(t - e.t)
            }
        }
    }

    pub fn arrivals(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::Arrival)
            .count()
    }

    /// CSV with header `t,kind,n,x,y`; the first row is the initial state.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,kind,n,x,y")?;
        let row = |w: &mut W, t: f64, kind: &str, s: &StateX| {
            writeln!(
                w,
                "{},{},{},{},{}",
                format_sig(t, 12),
                kind,
                s.n,
                format_sig(s.x, 12),
                format_sig(s.y, 12)
            )
        };
        row(&mut w, 0.0, "start", &self.initial)?;
        for e in &self.events {
            row(&mut w, e.t, e.kind.label(), &e.state_after)?;
        }
        Ok(())
    }
}

/// Formats like C's `%.{digits}g`.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        format!("{m}e{exp}")
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn simulate_path(
    field: &IntensityField,
    start: StateX,
    horizon: f64,
    seed: SeedSpec,
    sampler: Sampler,
) -> Result<Trajectory, SimError> {
    let mut walker = PathWalker::new(field, start, seed, sampler);
    let mut events = Vec::new();
    while let Some(e) = walker.advance(horizon)? {
        events.push(e);
    }
    Ok(Trajectory {
        initial: start,
        events,
        horizon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HittingTime {
    Hit(f64),
    Censored(f64),
}

impl HittingTime {
    pub fn value(&self) -> Option<f64> {
        match self {
            HittingTime::Hit(t) => Some(*t),
            HittingTime::Censored(_) => None,
        }
    }
}

/// First time the queue empties, or `Censored(cap)`.
pub fn hitting_time_tau0(
    field: &IntensityField,
    start: StateX,
    seed: SeedSpec,
    cap: f64,
    sampler: Sampler,
) -> Result<HittingTime, SimError> {
    if start.n == 0 {
        return Ok(HittingTime::Hit(0.0));
    }
    let mut walker = PathWalker::new(field, start, seed, sampler);
    while let Some(e) = walker.advance(cap)? {
        if e.state_after.n == 0 {
            return Ok(HittingTime::Hit(e.t));
        }
    }
    Ok(HittingTime::Censored(cap))
}

/// `coef * n^n_pow * x^x_pow * y^y_pow`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub n_pow: u32,
    pub x_pow: u32,
    pub y_pow: u32,
}

/// A state function whose time integral is accumulated per cycle.
#[derive(Debug, Clone, PartialEq)]
pub enum StateFunctional {
    /// `1(n = m)`.
    Indicator(u32),
    /// Integrated in closed form along each linear segment.
    Polynomial(Vec<Monomial>),
    /// Integrated by quadrature.
    Expression(IntensityExpr),
}

impl StateFunctional {
    pub fn queue_length() -> Self {
        StateFunctional::Polynomial(vec![Monomial {
            coef: 1.0,
            n_pow: 1,
            x_pow: 0,
            y_pow: 0,
        }])
    }

    pub fn one() -> Self {
        StateFunctional::Polynomial(vec![Monomial {
            coef: 1.0,
            n_pow: 0,
            x_pow: 0,
            y_pow: 0,
        }])
    }

    pub fn eval(&self, s: &StateX) -> f64 {
        match self {
            StateFunctional::Indicator(m) => f64::from(u8::from(s.n == *m)),
            StateFunctional::Polynomial(terms) => terms
                .iter()
                .map(|t| {
                    t.coef
                        * f64::from(s.n).powi(t.n_pow as i32)
                        * s.x.powi(t.x_pow as i32)
                        * s.y.powi(t.y_pow as i32)
                })
                .sum(),
            StateFunctional::Expression(e) => e.eval(s),
        }
    }

    /// `int_0^d g(s.flow(u)) du`.
    pub fn integrate_along(&self, s: &StateX, d: f64) -> Result<f64, QuadratureError> {
        match self {
            StateFunctional::Indicator(m) => Ok(if s.n == *m { d } else { 0.0 }),
            StateFunctional::Polynomial(terms) => {
                let xdot = if s.n > 0 { 1.0 } else { 0.0 };
                Ok(terms
                    .iter()
                    .map(|t| {
                        let px = binomial_poly(s.x, xdot, t.x_pow);
                        let py = binomial_poly(s.y, 1.0, t.y_pow);
                        let nn = f64::from(s.n).powi(t.n_pow as i32);
                        t.coef * nn * integrate_product(&px, &py, d)
                    })
                    .sum())
            }
            StateFunctional::Expression(e) => {
                let mut bps = Vec::new();
                e.breakpoints_along_flow(s, 0.0, d, &mut bps);
                quadrature::integrate(
                    |u| -> Result<f64, QuadratureError> { Ok(e.eval(&s.flow(u))) },
                    0.0,
                    d,
                    &bps,
                )
            }
        }
    }
}

// coefficients of (a + b u)^p in powers of u
fn binomial_poly(a: f64, b: f64, p: u32) -> Vec<f64> {
    let p = p as usize;
    let mut binom = 1.0;
    (0..=p)
        .map(|i| {
            let c = binom * a.powi((p - i) as i32) * b.powi(i as i32);
            binom = binom * (p - i) as f64 / (i + 1) as f64;
            c
        })
        .collect()
}

fn integrate_product(p: &[f64], q: &[f64], d: f64) -> f64 {
    let mut acc = 0.0;
    for (i, a) in p.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        for (j, b) in q.iter().enumerate() {
            let k = i + j + 1;
            acc += a * b * d.powi(k as i32) / k as f64;
        }
    }
    acc
}

/// One excursion from `(1, 0, 0)` back to `(1, 0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegenerationCycle {
    pub start_t: f64,
    pub end_t: f64,
    /// Time spent with exactly `m` customers, indexed by `m`.
    pub occupancy: Vec<f64>,
    /// Integrals of the registered functionals, in registration order.
    pub integrals: Vec<f64>,
}

impl RegenerationCycle {
    pub fn length(&self) -> f64 {
        self.end_t - self.start_t
    }
}

#[derive(Debug, Clone)]
pub struct CycleSpec {
    pub warmup_cycles: usize,
    pub num_cycles: usize,
    pub functionals: Vec<StateFunctional>,
    pub cycle_cap: f64,
    pub sampler: Sampler,
}

impl CycleSpec {
    pub fn new(num_cycles: usize) -> Self {
        Self {
            warmup_cycles: 0,
            num_cycles,
            functionals: Vec::new(),
            cycle_cap: DEFAULT_CYCLE_CAP,
            sampler: Sampler::Thinning,
        }
    }

    pub fn with_functionals(mut self, f: Vec<StateFunctional>) -> Self {
        self.functionals = f;
        self
    }

    pub fn with_warmup(mut self, w: usize) -> Self {
        self.warmup_cycles = w;
        self
    }
}

/// Runs one long path from the regeneration state and cuts it at every
/// idle-to-busy arrival.
pub fn collect_cycles(
    field: &IntensityField,
    spec: &CycleSpec,
    seed: SeedSpec,
) -> Result<Vec<RegenerationCycle>, SimError> {
    let mut walker = PathWalker::new(field, StateX::REGENERATION, seed, spec.sampler);
    let total = spec.warmup_cycles + spec.num_cycles;
    let mut out = Vec::with_capacity(spec.num_cycles);
    let fresh = |start_t: f64| RegenerationCycle {
        start_t,
        end_t: start_t,
        occupancy: Vec::new(),
        integrals: vec![0.0; spec.functionals.len()],
    };
    let mut cycle = fresh(0.0);
    let mut done = 0;
    while done < total {
        let seg_start = walker.time();
        let s = walker.state();
        let limit = cycle.start_t + spec.cycle_cap;
        let event = walker.advance(limit)?;
        let d = walker.time() - seg_start;
        let m = s.n as usize;
        if cycle.occupancy.len() <= m {
            cycle.occupancy.resize(m + 1, 0.0);
        }
        cycle.occupancy[m] += d;
        for (acc, g) in cycle.integrals.iter_mut().zip(&spec.functionals) {
            *acc += g.integrate_along(&s, d)?;
        }
        let Some(e) = event else {
            return Err(SimError::CycleCap {
                cap: spec.cycle_cap,
            });
        };
        if e.kind == EventKind::Arrival && s.n == 0 {
            cycle.end_t = e.t;
            if done >= spec.warmup_cycles {
                out.push(cycle);
            }
            done += 1;
            cycle = fresh(e.t);
        }
    }
    Ok(out)
}
