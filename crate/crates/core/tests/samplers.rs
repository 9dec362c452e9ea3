//! Distributional checks of the first jump from a fixed state against the
//! exact law `P(T > z) = exp(-int_0^z (lambda + h))`, for every sampler.

use varq::error::QuadratureError;
use varq::quadrature;
use varq::simulator::{EventKind, PathWalker, Sampler};
use varq::{IntensityField, SeedSpec, StateX};

const SAMPLES: u64 = 4000;
const SAMPLERS: [Sampler; 3] = [Sampler::Thinning, Sampler::Inversion, Sampler::Competing];

fn cases() -> Vec<(&'static str, IntensityField, StateX)> {
    vec![
        (
            "constant",
            IntensityField::constant(1.0, 2.0),
            StateX {
                n: 1,
                x: 0.0,
                y: 0.0,
            },
        ),
        (
            "heavy_tail",
            IntensityField::from_strs("0.5", "6/(1+x)", Some("0.5"), 0.5, 6.0).unwrap(),
            StateX {
                n: 2,
                x: 0.5,
                y: 1.0,
            },
        ),
        (
            "step",
            IntensityField::from_strs("if_gt(x, 1, 3, 0.5)", "1", Some("1"), 3.0, 1.0).unwrap(),
            StateX {
                n: 1,
                x: 0.3,
                y: 0.0,
            },
        ),
        (
            "idle_clock",
            IntensityField::from_strs("0.5+0.5*exp(0-y)", "6/(1+x)", None, 1.0, 6.0).unwrap(),
            StateX::idle(0.2),
        ),
    ]
}

fn first_jumps(field: &IntensityField, s: StateX, sampler: Sampler) -> Vec<(f64, EventKind)> {
    (0..SAMPLES)
        .map(|r| {
            let mut w = PathWalker::new(field, s, SeedSpec::new(0xF1257, r), sampler);
            let e = w.advance(1e6).unwrap().expect("a jump before 1e6");
            (e.t, e.kind)
        })
        .collect()
}

fn arrival_first_probability(field: &IntensityField, s: &StateX) -> f64 {
    let end = 60.0;
    let bps = field.breakpoints(s, 0.0, end);
    quadrature::integrate(
        |u| -> Result<f64, QuadratureError> {
            let z = s.flow(u);
            Ok(field.arrival_rate(&z)? * field.survival_probability(s, u)?)
        },
        0.0,
        end,
        &bps,
    )
    .unwrap()
}

#[test]
fn first_jump_time_matches_survival_law() {
    // one-sample KS at alpha = 0.01
    let critical = 1.628 / (SAMPLES as f64).sqrt();
    for (name, field, s) in cases() {
        for sampler in SAMPLERS {
            let mut ts: Vec<f64> = first_jumps(&field, s, sampler)
                .into_iter()
                .map(|j| j.0)
                .collect();
            ts.sort_by(f64::total_cmp);
            let n = ts.len() as f64;
            let d = ts
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let cdf = 1.0 - field.survival_probability(&s, t).unwrap();
                    (cdf - i as f64 / n)
                        .abs()
                        .max((cdf - (i + 1) as f64 / n).abs())
                })
                .fold(0.0, f64::max);
            assert!(
                d < critical,
                "{name} / {sampler:?}: KS {d:.4} >= {critical:.4}"
            );
        }
    }
}

#[test]
fn first_jump_channel_split_matches_rates() {
    for (name, field, s) in cases() {
        let p = arrival_first_probability(&field, &s);
        let se = (p * (1.0 - p) / SAMPLES as f64).sqrt();
        for sampler in SAMPLERS {
            let arrivals = first_jumps(&field, s, sampler)
                .iter()
                .filter(|j| j.1 == EventKind::Arrival)
                .count();
            let freq = arrivals as f64 / SAMPLES as f64;
            assert!(
                (freq - p).abs() <= 4.0 * se.max(1e-9),
                "{name} / {sampler:?}: arrival fraction {freq:.4} vs {p:.4}"
            );
        }
    }
}

#[test]
fn idle_jumps_are_arrivals() {
    let (_, field, s) = cases().pop().unwrap();
    assert_eq!(s.n, 0);
    for sampler in SAMPLERS {
        assert!(first_jumps(&field, s, sampler)
            .iter()
            .all(|j| j.1 == EventKind::Arrival));
    }
}
