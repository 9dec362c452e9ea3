//! Statistical machinery on top of the simulator.
//!
//! Stationary quantities come from regenerative ratio estimators over i.i.d.
//! cycles; everything else is replica Monte Carlo. Replica `r` of an
//! experiment always uses `SeedSpec::new(master, r)` and per-replica results
//! are reduced in index order, so outputs do not depend on the thread count.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EstimateError, QuadratureError, SimError};
use crate::intensity::{Channel, IntensityField};
use crate::quadrature;
use crate::rng::{fork, SeedSpec};
use crate::simulator::{
    collect_cycles, hitting_time_tau0, next_event_inversion, next_event_thinning, CycleSpec,
    EventKind, HittingTime, NextJump, PathWalker, RegenerationCycle, Sampler,
};
use crate::state::{lyapunov_l, StateX};
use crate::testfn::{TestFunction, TimeTestFunction};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
pub const MIN_CYCLES: usize = 100;
/// Independent cycle streams used by the parallel cycle collector.
pub const CYCLE_CHUNKS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateCI {
    pub value: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
}

impl EstimateCI {
    pub fn new(value: f64, std_error: f64, n_samples: usize) -> Self {
        Self {
            value,
            std_error,
            ci_low: value - Z95 * std_error,
            ci_high: value + Z95 * std_error,
            n_samples,
        }
    }

    /// Sample mean with the standard error of the mean.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::new(f64::NAN, f64::NAN, 0);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self::new(mean, 0.0, 1);
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self::new(mean, (var / n as f64).sqrt(), n)
    }

    /// `|value - target| <= k * std_error`.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }
}

/// `sum(y) / sum(t)` with the delta-method standard error for i.i.d. pairs.
pub fn ratio_estimate(ys: &[f64], ts: &[f64]) -> EstimateCI {
    let n = ys.len();
    let sy: f64 = ys.iter().sum();
    let st: f64 = ts.iter().sum();
    let r = sy / st;
    if n < 2 {
        return EstimateCI::new(r, 0.0, n);
    }
    let mean_t = st / n as f64;
    let s2 = ys
        .iter()
        .zip(ts)
        .map(|(y, t)| (y - r * t).powi(2))
        .sum::<f64>()
        / (n - 1) as f64;
    EstimateCI::new(r, (s2 / n as f64).sqrt() / mean_t, n)
}

fn need_cycles(cycles: &[RegenerationCycle]) -> Result<(), EstimateError> {
    if cycles.len() < MIN_CYCLES {
        return Err(EstimateError::InsufficientCycles {
            needed: MIN_CYCLES,
            got: cycles.len(),
        });
    }
    Ok(())
}

/// Stationary probability of exactly `m` customers.
pub fn availability_factor(
    cycles: &[RegenerationCycle],
    m: u32,
) -> Result<EstimateCI, EstimateError> {
    need_cycles(cycles)?;
    let ys: Vec<f64> = cycles
        .iter()
        .map(|c| c.occupancy.get(m as usize).copied().unwrap_or(0.0))
        .collect();
    let ts: Vec<f64> = cycles.iter().map(RegenerationCycle::length).collect();
    Ok(ratio_estimate(&ys, &ts))
}

/// Stationary mean of the functional registered at `index`.
pub fn stationary_functional(
    cycles: &[RegenerationCycle],
    index: usize,
) -> Result<EstimateCI, EstimateError> {
    need_cycles(cycles)?;
    if cycles.iter().any(|c| index >= c.integrals.len()) {
        return Err(EstimateError::UnknownFunctional { index });
    }
    let ys: Vec<f64> = cycles.iter().map(|c| c.integrals[index]).collect();
    let ts: Vec<f64> = cycles.iter().map(RegenerationCycle::length).collect();
    Ok(ratio_estimate(&ys, &ts))
}

/// Point estimates of the whole stationary `n`-marginal.
pub fn occupancy_distribution(cycles: &[RegenerationCycle]) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut total = 0.0;
    for c in cycles {
        if acc.len() < c.occupancy.len() {
            acc.resize(c.occupancy.len(), 0.0);
        }
        for (a, o) in acc.iter_mut().zip(&c.occupancy) {
            *a += o;
        }
        total += c.length();
    }
    acc.iter().map(|a| a / total).collect()
}

pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

/// Collects `spec.num_cycles` cycles split over `chunks` independent
/// streams; the result depends on `chunks` but not on the thread count.
pub fn collect_cycles_parallel(
    field: &IntensityField,
    spec: &CycleSpec,
    seed: u64,
    chunks: usize,
) -> Result<Vec<RegenerationCycle>, SimError> {
    let chunks = chunks.max(1);
    let base = spec.num_cycles / chunks;
    let extra = spec.num_cycles % chunks;
    let parts: Vec<Vec<RegenerationCycle>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = spec.clone();
            s.num_cycles = base + usize::from(c < extra);
            collect_cycles(field, &s, SeedSpec::new(seed, c as u64))
        })
        .collect::<Result<_, _>>()?;
    Ok(parts.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingRow {
    pub start: StateX,
    pub moment: EstimateCI,
    pub lyapunov: f64,
    pub ratio: f64,
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingReport {
    pub k: u32,
    pub m: u32,
    pub cap: f64,
    pub rows: Vec<HittingRow>,
    pub max_ratio: f64,
}

/// Estimates `E tau0^k` per start and compares it with `L_m(start)`.
#[allow(clippy::too_many_arguments)]
pub fn hitting_moment_experiment(
    field: &IntensityField,
    starts: &[StateX],
    k: u32,
    m: u32,
    replicas: usize,
    seed: u64,
    cap: f64,
    sampler: Sampler,
) -> Result<HittingReport, EstimateError> {
    if m <= k {
        return Err(EstimateError::MomentOrder { k, m });
    }
    let mut rows = Vec::with_capacity(starts.len());
    for (j, start) in starts.iter().enumerate() {
        let master = fork(seed, j as u64);
        let taus: Vec<HittingTime> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                hitting_time_tau0(field, *start, SeedSpec::new(master, r as u64), cap, sampler)
            })
            .collect::<Result<_, _>>()?;
        let hits: Vec<f64> = taus
            .iter()
            .filter_map(HittingTime::value)
            .map(|t| t.powi(k as i32))
            .collect();
        let censored = replicas - hits.len();
        let fraction = censored as f64 / replicas as f64;
        if fraction > 0.01 {
            return Err(EstimateError::TooManyCensored {
                start: *start,
                fraction,
            });
        }
        let moment = EstimateCI::from_samples(&hits);
        let lyapunov = lyapunov_l(start, m);
        rows.push(HittingRow {
            start: *start,
            ratio: moment.value / lyapunov,
            moment,
            lyapunov,
            censored,
        });
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(HittingReport {
        k,
        m,
        cap,
        rows,
        max_ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynkinEstimate {
    pub residual: EstimateCI,
    /// `max(|f(X_0)|, mean |f(X_t)|)`, the yardstick for the standard error.
    pub scale: f64,
    pub max_abs_pathwise: f64,
}

impl DynkinEstimate {
    pub fn passes(&self, k_se: f64, rel_se: f64) -> bool {
        self.residual.covers(0.0, k_se) && self.residual.std_error <= rel_se * self.scale
    }
}

fn segment_integral<G>(
    field: &IntensityField,
    s: &StateX,
    d: f64,
    mut g: G,
) -> Result<f64, QuadratureError>
where
    G: FnMut(f64, &StateX) -> Result<f64, QuadratureError>,
{
    if d <= 0.0 {
        return Ok(0.0);
    }
    let bps = field.breakpoints(s, 0.0, d);
    quadrature::integrate(|u| g(u, &s.flow(u)), 0.0, d, &bps)
}

/// `f(X_t) - f(X_0) - int_0^t (G f)(X_s) ds` along one path, plus `f(X_t)`.
pub fn dynkin_path_residual<F: TestFunction + ?Sized>(
    field: &IntensityField,
    f: &F,
    start: StateX,
    t: f64,
    seed: SeedSpec,
    sampler: Sampler,
) -> Result<(f64, f64), EstimateError> {
    let mut walker = PathWalker::new(field, start, seed, sampler);
    let mut integral = 0.0;
    loop {
        let t0 = walker.time();
        let s = walker.state();
        let ev = walker.advance(t)?;
        integral += segment_integral(field, &s, walker.time() - t0, |_, z| {
            Ok(field.generator_apply(z, f)?)
        })?;
        if ev.is_none() {
            break;
        }
    }
    let end = f.value(&walker.state());
    Ok((end - f.value(&start) - integral, end))
}

/// Time-dependent counterpart with `(d/ds + G) phi(s, X_s)`.
pub fn dynkin_path_residual_time<F: TimeTestFunction + ?Sized>(
    field: &IntensityField,
    phi: &F,
    start: StateX,
    t: f64,
    seed: SeedSpec,
    sampler: Sampler,
) -> Result<(f64, f64), EstimateError> {
    let mut walker = PathWalker::new(field, start, seed, sampler);
    let mut integral = 0.0;
    loop {
        let t0 = walker.time();
        let s = walker.state();
        let ev = walker.advance(t)?;
        integral += segment_integral(field, &s, walker.time() - t0, |u, z| {
            Ok(field.generator_apply_time(t0 + u, z, phi)?)
        })?;
        if ev.is_none() {
            break;
        }
    }
    let end = phi.value(t, &walker.state());
    Ok((end - phi.value(0.0, &start) - integral, end))
}

fn summarize_dynkin(pairs: Vec<(f64, f64)>, start_value: f64) -> DynkinEstimate {
    let residuals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mean_abs_end = pairs.iter().map(|p| p.1.abs()).sum::<f64>() / pairs.len().max(1) as f64;
    DynkinEstimate {
        residual: EstimateCI::from_samples(&residuals),
        scale: start_value.abs().max(mean_abs_end),
        max_abs_pathwise: residuals.iter().fold(0.0, |a, r| a.max(r.abs())),
    }
}

pub fn dynkin_residual<F: TestFunction + ?Sized>(
    field: &IntensityField,
    f: &F,
    start: StateX,
    t: f64,
    replicas: usize,
    seed: u64,
    sampler: Sampler,
) -> Result<DynkinEstimate, EstimateError> {
    let pairs: Vec<(f64, f64)> = (0..replicas)
        .into_par_iter()
        .map(|r| dynkin_path_residual(field, f, start, t, SeedSpec::new(seed, r as u64), sampler))
        .collect::<Result<_, _>>()?;
    Ok(summarize_dynkin(pairs, f.value(&start)))
}

pub fn dynkin_residual_time<F: TimeTestFunction + ?Sized>(
    field: &IntensityField,
    phi: &F,
    start: StateX,
    t: f64,
    replicas: usize,
    seed: u64,
    sampler: Sampler,
) -> Result<DynkinEstimate, EstimateError> {
    let pairs: Vec<(f64, f64)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            dynkin_path_residual_time(field, phi, start, t, SeedSpec::new(seed, r as u64), sampler)
        })
        .collect::<Result<_, _>>()?;
    Ok(summarize_dynkin(pairs, phi.value(0.0, &start)))
}

/// Half the L1 distance between two histograms over `n`; missing tail
/// entries count as zero.
pub fn tv_marginal(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let s: f64 = (0..len).map(|i| (at(p, i) - at(q, i)).abs()).sum();
    (0.5 * s).clamp(0.0, 1.0)
}

/// Normalized histogram of queue lengths.
pub fn histogram(ns: impl IntoIterator<Item = u32>) -> Vec<f64> {
    let mut counts: Vec<f64> = Vec::new();
    let mut total = 0.0;
    for n in ns {
        let i = n as usize;
        if counts.len() <= i {
            counts.resize(i + 1, 0.0);
        }
        counts[i] += 1.0;
        total += 1.0;
    }
    counts.iter_mut().for_each(|c| *c /= total);
    counts
}

/// Stationary `n`-marginal from regeneration cycles, kept with the
/// per-cycle occupancies so that it can be bootstrapped.
#[derive(Debug, Clone)]
pub struct StationaryReference {
    pub probs: Vec<f64>,
    cycles: Vec<(Vec<f64>, f64)>,
}

impl StationaryReference {
    pub fn from_cycles(cycles: &[RegenerationCycle]) -> Result<Self, EstimateError> {
        need_cycles(cycles)?;
        Ok(Self {
            probs: occupancy_distribution(cycles),
            cycles: cycles
                .iter()
                .map(|c| (c.occupancy.clone(), c.length()))
                .collect(),
        })
    }

    pub fn build(
        field: &IntensityField,
        num_cycles: usize,
        sampler: Sampler,
        seed: u64,
    ) -> Result<Self, EstimateError> {
        let mut spec = CycleSpec::new(num_cycles);
        spec.sampler = sampler;
        let cycles = collect_cycles_parallel(field, &spec, seed, CYCLE_CHUNKS)?;
        Self::from_cycles(&cycles)
    }

    pub fn num_cycles(&self) -> usize {
        self.cycles.len()
    }

    fn resample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut acc = vec![0.0; self.probs.len()];
        let mut total = 0.0;
        for _ in 0..self.cycles.len() {
            let (occ, len) = &self.cycles[rng.random_range(0..self.cycles.len())];
            for (a, o) in acc.iter_mut().zip(occ) {
                *a += o;
            }
            total += len;
        }
        acc.iter().map(|a| a / total).collect()
    }

    fn multinomial<R: Rng>(&self, draws: usize, rng: &mut R) -> Vec<f64> {
        let mut left = draws as u64;
        let mut mass = 1.0;
        let mut out = vec![0.0; self.probs.len()];
        for (i, p) in self.probs.iter().enumerate() {
            if left == 0 {
                break;
            }
            let c = if i + 1 == self.probs.len() || *p >= mass {
                left
            } else {
                Binomial::new(left, (p / mass).clamp(0.0, 1.0))
                    .expect("valid binomial")
                    .sample(rng)
            };
            out[i] = c as f64 / draws as f64;
            left -= c;
            mass -= p;
        }
        out
    }

    /// TV between a size-`replicas` sample from the reference and a cycle
    /// bootstrap of the reference, repeated `boots` times.
    pub fn noise_floor(&self, replicas: usize, boots: usize, seed: u64) -> NoiseFloor {
        let samples: Vec<f64> = (0..boots)
            .into_par_iter()
            .map(|b| {
                let mut rng = SeedSpec::new(seed, b as u64).rng();
                let star = self.resample(&mut rng);
                let draw = self.multinomial(replicas, &mut rng);
                tv_marginal(&draw, &star)
            })
            .collect();
        let est = EstimateCI::from_samples(&samples);
        let sd = est.std_error * (samples.len() as f64).sqrt();
        NoiseFloor {
            mean: est.value,
            sd,
            threshold: est.value + 4.0 * sd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    pub mean: f64,
    pub sd: f64,
    /// TV values at or below this are treated as noise.
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartSpec {
    Fixed {
        state: StateX,
    },
    /// Start from the state reached after `burn_in` time units from the
    /// regeneration state, a draw from (approximately) the stationary law.
    Stationary {
        burn_in: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceOptions {
    pub replicas: usize,
    pub bootstrap: usize,
    /// Fit window on `t`.
    pub fit_from: f64,
    pub fit_to: f64,
    pub sampler: Sampler,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            replicas: 10_000,
            bootstrap: 200,
            fit_from: 1.0,
            fit_to: f64::INFINITY,
            sampler: Sampler::Thinning,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    /// Slope of `log(tv - floor)` against `log(1 + t)`.
    pub exponent: f64,
    pub intercept: f64,
    pub points: usize,
}

pub const CONVERGENCE_NOTE: &str = "TV is measured on the queue-length marginal only (a lower bound on the full-state TV). \
The fitted exponent describes the decay shape; the constants C, k of the polynomial bound are not identified.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub start: StartSpec,
    pub times: Vec<f64>,
    pub tv_estimates: Vec<f64>,
    pub noise_floor: NoiseFloor,
    pub at_floor: Vec<bool>,
    /// `tv[i+1] <= tv[i] + 4 sqrt(2) sd_floor` for every consecutive pair.
    pub monotone: bool,
    pub fit: Option<PowerFit>,
    pub replicas: usize,
    pub reference_cycles: usize,
    pub note: String,
}

impl ConvergenceCurve {
    pub fn fit_exponent(&self) -> Option<f64> {
        self.fit.map(|f| f.exponent)
    }

    pub fn require_fit(&self) -> Result<PowerFit, EstimateError> {
        self.fit.ok_or(EstimateError::Uninformative)
    }

    pub fn all_at_floor(&self) -> bool {
        self.at_floor.iter().all(|b| *b)
    }
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Empirical TV between the time-`t` queue-length law and the stationary
/// reference on a time grid, with a bootstrap noise floor and a power-law
/// fit over the part of the window that is above the floor.
pub fn convergence_experiment(
    field: &IntensityField,
    start: StartSpec,
    times: &[f64],
    reference: &StationaryReference,
    opts: &ConvergenceOptions,
    seed: u64,
) -> Result<ConvergenceCurve, EstimateError> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
        return Err(EstimateError::Invalid(
            "time grid must be non-empty, non-negative and increasing".into(),
        ));
    }
    let (s0, offset) = match start {
        StartSpec::Fixed { state } => (state, 0.0),
        StartSpec::Stationary { burn_in } => (StateX::REGENERATION, burn_in),
    };
    let path_seed = fork(seed, 1);
    let samples: Vec<Vec<u32>> = (0..opts.replicas)
        .into_par_iter()
        .map(|r| {
            let mut w =
                PathWalker::new(field, s0, SeedSpec::new(path_seed, r as u64), opts.sampler);
            let mut ns = Vec::with_capacity(times.len());
            for &t in times {
                while w.advance(offset + t)?.is_some() {}
                ns.push(w.state().n);
            }
            Ok::<_, SimError>(ns)
        })
        .collect::<Result<_, _>>()?;

    let tv_estimates: Vec<f64> = (0..times.len())
        .map(|i| tv_marginal(&histogram(samples.iter().map(|ns| ns[i])), &reference.probs))
        .collect();
    let noise_floor = reference.noise_floor(opts.replicas, opts.bootstrap, fork(seed, 2));
    let at_floor: Vec<bool> = tv_estimates
        .iter()
        .map(|tv| *tv <= noise_floor.threshold)
        .collect();
    let slack = 4.0 * std::f64::consts::SQRT_2 * noise_floor.sd;
    let monotone = tv_estimates.windows(2).all(|w| w[1] <= w[0] + slack);

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        if t < opts.fit_from || t > opts.fit_to {
            continue;
        }
        if at_floor[i] {
            break;
        }
        xs.push((1.0 + t).ln());
        ys.push((tv_estimates[i] - noise_floor.mean).ln());
    }
    let fit = (xs.len() >= 2).then(|| {
        let (exponent, intercept) = least_squares(&xs, &ys);
        PowerFit {
            exponent,
            intercept,
            points: xs.len(),
        }
    });

    Ok(ConvergenceCurve {
        start,
        times: times.to_vec(),
        tv_estimates,
        noise_floor,
        at_floor,
        monotone,
        fit,
        replicas: opts.replicas,
        reference_cycles: reference.num_cycles(),
        note: CONVERGENCE_NOTE.to_string(),
    })
}

/// Observed jump pattern on `(0, delta]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JumpCounts {
    pub trials: u64,
    pub none: u64,
    pub one_up: u64,
    pub one_down: u64,
    pub two_or_more: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpProbRow {
    pub delta: f64,
    pub counts: JumpCounts,
    pub p_none: f64,
    pub survival: f64,
    pub p_one_up: f64,
    pub int_lambda: f64,
    pub p_one_down: f64,
    pub int_h: f64,
    pub p_two_or_more: f64,
    /// `P(>= 2 jumps) / delta^2`.
    pub two_or_more_scaled: f64,
    /// `|P(one up) - int lambda| <= bound * lambda_sup * delta^2` holds exactly.
    pub up_allowance: f64,
    pub down_allowance: f64,
    pub none_ok: bool,
    pub up_ok: bool,
    pub down_ok: bool,
}

fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Empirical small-interval jump probabilities from `s` against the
/// integrated-hazard predictions, one row per `delta`.
pub fn jump_probability_experiment(
    field: &IntensityField,
    s: StateX,
    deltas: &[f64],
    trials: usize,
    seed: u64,
    sampler: Sampler,
) -> Result<Vec<JumpProbRow>, EstimateError> {
    deltas
        .iter()
        .enumerate()
        .map(|(j, &delta)| {
            let master = fork(seed, j as u64);
            let outcomes: Vec<(u32, Option<EventKind>)> = (0..trials)
                .into_par_iter()
                .map(|r| {
                    let mut w = PathWalker::new(field, s, SeedSpec::new(master, r as u64), sampler);
                    let mut jumps = 0u32;
                    let mut first = None;
                    while let Some(e) = w.advance(delta)? {
                        jumps += 1;
                        first.get_or_insert(e.kind);
                    }
                    Ok::<_, SimError>((jumps, first))
                })
                .collect::<Result<_, _>>()?;
            let mut c = JumpCounts {
                trials: trials as u64,
                ..JumpCounts::default()
            };
            for (jumps, first) in outcomes {
                match (jumps, first) {
                    (0, _) => c.none += 1,
                    (1, Some(EventKind::Arrival)) => c.one_up += 1,
                    (1, _) => c.one_down += 1,
                    _ => c.two_or_more += 1,
                }
            }
            let n = c.trials;
            let frac = |k: u64| k as f64 / n as f64;
            let survival = field.survival_probability(&s, delta)?;
            let int_lambda = field.integrated(&s, 0.0, delta, Channel::Arrival)?;
            let int_h = field.integrated(&s, 0.0, delta, Channel::Service)?;
            let (p_none, p_up, p_down) = (frac(c.none), frac(c.one_up), frac(c.one_down));
            let up_allowance = field.bound() * field.lambda_sup() * delta * delta;
            let down_allowance = field.bound() * field.h_sup() * delta * delta;
            Ok(JumpProbRow {
                delta,
                counts: c,
                p_none,
                survival,
                p_one_up: p_up,
                int_lambda,
                p_one_down: p_down,
                int_h,
                p_two_or_more: frac(c.two_or_more),
                two_or_more_scaled: frac(c.two_or_more) / (delta * delta),
                up_allowance,
                down_allowance,
                none_ok: (p_none - survival).abs() <= 3.0 * binomial_se(survival, n),
                up_ok: (p_up - int_lambda).abs()
                    <= 3.0 * binomial_se(int_lambda.min(1.0), n) + up_allowance,
                down_ok: (p_down - int_h).abs()
                    <= 3.0 * binomial_se(int_h.min(1.0), n) + down_allowance,
            })
        })
        .collect()
}

/// `P(>= 2 jumps)` at each level divided by the level before; about 1/4
/// when the deltas halve and the probability is second order.
pub fn two_jump_ratios(rows: &[JumpProbRow]) -> Vec<f64> {
    rows.windows(2)
        .map(|w| w[1].p_two_or_more / w[0].p_two_or_more)
        .collect()
}

/// First-jump samples from `s`, one replica stream per sample.
pub fn sample_first_jumps(
    field: &IntensityField,
    s: StateX,
    sampler: Sampler,
    count: usize,
    seed: u64,
) -> Result<Vec<NextJump>, SimError> {
    (0..count)
        .into_par_iter()
        .map(|r| {
            let mut rng = SeedSpec::new(seed, r as u64).rng();
            match sampler {
                Sampler::Thinning => next_event_thinning(field, &s, &mut rng),
                Sampler::Inversion | Sampler::Competing => {
                    let u: f64 = rng.random();
                    let uk: f64 = rng.random();
                    next_event_inversion(field, &s, u, uk)?.ok_or(SimError::Stall {
                        state: s,
                        proposals: 0,
                    })
                }
            }
        })
        .collect()
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value `sqrt(-ln(alpha / 2) / 2) sqrt((n + m) / (n m))`.
pub fn ks_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{mm1_stationary, MM1Params};
    use crate::simulator::StateFunctional;
    use crate::testfn::{Constant, LinearClocks, TimePower};
    use proptest::prelude::*;

    #[test]
    fn tv_examples() {
        assert_eq!(tv_marginal(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]), 0.0);
        assert_eq!(tv_marginal(&[1.0], &[0.0, 1.0]), 1.0);
        assert!((tv_marginal(&[0.5, 0.5], &[0.75, 0.25]) - 0.25).abs() < 1e-15);
    }

    fn normalized(v: Vec<f64>) -> Vec<f64> {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    }

    fn hist() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, 1..12).prop_map(normalized)
    }

    proptest! {
        #[test]
        fn tv_is_a_metric(p in hist(), q in hist(), r in hist()) {
            let pq = tv_marginal(&p, &q);
            prop_assert!((0.0..=1.0).contains(&pq));
            prop_assert!((pq - tv_marginal(&q, &p)).abs() < 1e-15);
            prop_assert!(pq <= tv_marginal(&p, &r) + tv_marginal(&r, &q) + 1e-12);
            prop_assert_eq!(tv_marginal(&p, &p), 0.0);
        }

        #[test]
        fn ratio_estimator_ignores_order(pairs in prop::collection::vec((0.0f64..5.0, 0.1f64..5.0), 2..60), seed in any::<u64>()) {
            let ys: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ts: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let a = ratio_estimate(&ys, &ts);
            let mut idx: Vec<usize> = (0..pairs.len()).collect();
            let mut rng = SeedSpec::new(seed, 0).rng();
            for i in (1..idx.len()).rev() {
                idx.swap(i, rand::Rng::random_range(&mut rng, 0..=i));
            }
            let ys2: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
            let ts2: Vec<f64> = idx.iter().map(|&i| ts[i]).collect();
            let b = ratio_estimate(&ys2, &ts2);
            prop_assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs().max(1.0));
            prop_assert!((a.std_error - b.std_error).abs() <= 1e-9 * a.std_error.max(1e-12));
            prop_assert!(a.ci_low <= a.value && a.value <= a.ci_high);
        }
    }

    #[test]
    fn ratio_estimator_small_example() {
        let e = ratio_estimate(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]);
        assert_eq!(e.value, 1.0);
        // residuals y - r t = (-1, 0, 1), s^2 = 1, se = sqrt(1/3) / mean(t)
        assert!((e.std_error - (1.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }

    fn mm1_cycles(n: usize) -> Vec<RegenerationCycle> {
        let f = IntensityField::constant(1.0, 2.0);
        let spec = CycleSpec::new(n).with_functionals(vec![
            StateFunctional::one(),
            StateFunctional::Indicator(0),
            StateFunctional::queue_length(),
        ]);
        collect_cycles(&f, &spec, SeedSpec::new(21, 0)).unwrap()
    }

    #[test]
    fn availability_partitions_and_consistency() {
        let cycles = mm1_cycles(2000);
        let probs = occupancy_distribution(&cycles);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let total: f64 = (0..probs.len() as u32)
            .map(|m| availability_factor(&cycles, m).unwrap().value)
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        let one = stationary_functional(&cycles, 0).unwrap();
        assert!((one.value - 1.0).abs() < 1e-12);
        let idle = stationary_functional(&cycles, 1).unwrap();
        let a0 = availability_factor(&cycles, 0).unwrap();
        assert!((idle.value - a0.value).abs() < 1e-12);
        assert!((idle.std_error - a0.std_error).abs() < 1e-12);
        let p = MM1Params::new(1.0, 2.0).unwrap();
        assert!(a0.covers(mm1_stationary(&p, 0).unwrap(), 4.0));
        assert!(matches!(
            stationary_functional(&cycles, 7),
            Err(EstimateError::UnknownFunctional { index: 7 })
        ));
        assert!(matches!(
            availability_factor(&cycles[..50], 0),
            Err(EstimateError::InsufficientCycles { .. })
        ));
    }

    #[test]
    fn cycles_look_independent() {
        let cycles = mm1_cycles(20_000);
        let lens: Vec<f64> = cycles.iter().map(RegenerationCycle::length).collect();
        let r = lag1_autocorrelation(&lens);
        assert!(r.abs() < 3.0 / (lens.len() as f64).sqrt(), "r = {r}");
    }

    #[test]
    fn dynkin_exact_cases() {
        let f = IntensityField::constant(1.0, 2.0);
        let s0 = StateX {
            n: 2,
            x: 0.3,
            y: 0.1,
        };
        for r in 0..50 {
            let (res, _) = dynkin_path_residual(
                &f,
                &Constant(4.0),
                s0,
                5.0,
                SeedSpec::new(1, r),
                Sampler::Thinning,
            )
            .unwrap();
            assert_eq!(res, 0.0);
            let (res, _) = dynkin_path_residual_time(
                &f,
                &TimePower { k: 1 },
                s0,
                5.0,
                SeedSpec::new(1, r),
                Sampler::Thinning,
            )
            .unwrap();
            assert!(res.abs() < 1e-12);
        }
        let null = IntensityField::from_strs("0", "0", None, 1.0, 1.0).unwrap();
        for s in [s0, StateX::idle(2.0)] {
            let (res, _) = dynkin_path_residual(
                &null,
                &LinearClocks { cx: 1.0, cy: 1.0 },
                s,
                5.0,
                SeedSpec::new(2, 0),
                Sampler::Thinning,
            )
            .unwrap();
            assert!(res.abs() < 1e-12, "res = {res}");
        }
    }

    #[test]
    fn histogram_and_fit_helpers() {
        let h = histogram([0, 0, 1, 3]);
        assert_eq!(h, vec![0.5, 0.25, 0.0, 0.25]);
        let xs = [0.0, 1.0, 2.0];
        let (m, b) = least_squares(&xs, &[1.0, -1.0, -3.0]);
        assert!((m + 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ks_statistic() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert!((ks_two_sample(&[1.0, 2.0, 3.0, 4.0], &[2.5, 3.5, 4.5, 5.5]) - 0.5).abs() < 1e-15);
        let c = ks_critical_value(0.01, 10_000, 10_000);
        assert!((c - 0.023_018).abs() < 1e-5, "c = {c}");
    }

    #[test]
    fn multinomial_draw_sums_to_one() {
        let cycles = mm1_cycles(500);
        let r = StationaryReference::from_cycles(&cycles).unwrap();
        let mut rng = SeedSpec::new(3, 0).rng();
        let d = r.multinomial(1000, &mut rng);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let nf = r.noise_floor(1000, 50, 5);
        assert!(nf.mean > 0.0 && nf.threshold > nf.mean);
    }

    #[test]
    fn hitting_requires_m_above_k() {
        let f = IntensityField::constant(1.0, 2.0);
        let err = hitting_moment_experiment(
            &f,
            &[StateX::REGENERATION],
            2,
            2,
            10,
            1,
            1e3,
            Sampler::Thinning,
        );
        assert!(matches!(err, Err(EstimateError::MomentOrder { .. })));
        let rep = hitting_moment_experiment(
            &f,
            &[StateX::idle(0.0)],
            1,
            2,
            10,
            1,
            1e3,
            Sampler::Thinning,
        )
        .unwrap();
        assert_eq!(rep.rows[0].moment.value, 0.0);
    }

    #[test]
    fn censoring_is_reported() {
        let f = IntensityField::from_strs("1", "0.5", None, 1.0, 0.5).unwrap();
        let err = hitting_moment_experiment(
            &f,
            &[StateX {
                n: 3,
                x: 0.0,
                y: 0.0,
            }],
            1,
            2,
            200,
            1,
            5.0,
            Sampler::Thinning,
        );
        assert!(matches!(err, Err(EstimateError::TooManyCensored { .. })));
    }
}
