//! Globally adaptive Gauss–Kronrod (7/15) quadrature.

use crate::error::QuadratureError;

pub const ABS_TOL: f64 = 1e-10;
pub const REL_TOL: f64 = 1e-8;
const MAX_SUBINTERVALS: usize = 2000;

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights on the odd Kronrod nodes XGK[1], XGK[3], XGK[5] and the centre.
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F, E>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64), E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx)? + f(c + dx)?;
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Ok((kron * h, ((kron - gauss) * h).abs()))
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Integrates `f` over `[a, b]`, splitting first at the supplied interior
/// breakpoints. Fails if the error target `max(ABS_TOL, REL_TOL * |I|)` is
/// not met within the subinterval budget.
pub fn integrate<F, E>(mut f: F, a: f64, b: f64, breakpoints: &[f64]) -> Result<f64, E>
where
    F: FnMut(f64) -> Result<f64, E>,
    E: From<QuadratureError>,
{
    integrate_with_tol(&mut f, a, b, breakpoints, ABS_TOL, REL_TOL)
}

pub fn integrate_with_tol<F, E>(
    f: &mut F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64, E>
where
    F: FnMut(f64) -> Result<f64, E>,
    E: From<QuadratureError>,
{
    if b <= a {
        return Ok(0.0);
    }
    let mut cuts: Vec<f64> = Vec::with_capacity(breakpoints.len() + 2);
    cuts.push(a);
    cuts.extend(breakpoints.iter().copied().filter(|&p| p > a && p < b));
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut pieces = Vec::with_capacity(cuts.len() + 16);
    for w in cuts.windows(2) {
        let (value, error) = gk15(f, w[0], w[1])?;
        pieces.push(Piece {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }
    loop {
        let total: f64 = pieces.iter().map(|p| p.value).sum();
        let err: f64 = pieces.iter().map(|p| p.error).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        if pieces.len() >= MAX_SUBINTERVALS {
            return Err(QuadratureError::NoConvergence { a, b, error: err }.into());
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("non-empty");
        let p = pieces[worst];
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            return Err(QuadratureError::NoConvergence { a, b, error: err }.into());
        }
        let (v1, e1) = gk15(f, p.a, mid)?;
        let (v2, e2) = gk15(f, mid, p.b)?;
        pieces[worst] = Piece {
            a: p.a,
            b: mid,
            value: v1,
            error: e1,
        };
        pieces.push(Piece {
            a: mid,
            b: p.b,
            value: v2,
            error: e2,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(v: f64) -> Result<f64, QuadratureError> {
        Ok(v)
    }

    #[test]
    fn kronrod_is_exact_for_degree_22() {
        let (v, _) = gk15(&mut |x: f64| ok(x.powi(22)), -1.0, 1.0).unwrap();
        assert!((v - 2.0 / 23.0).abs() < 1e-15);
        let (v, _) = gk15(&mut |x: f64| ok(x.powi(12) + 3.0 * x.powi(2)), 0.0, 2.0).unwrap();
        assert!((v - (2f64.powi(13) / 13.0 + 8.0)).abs() < 1e-10);
    }

    #[test]
    fn smooth_integrals() {
        let v = integrate(|x: f64| ok(x.exp()), 0.0, 3.0, &[]).unwrap();
        assert!((v - (3f64.exp() - 1.0)).abs() < 1e-10);
        let v = integrate(|x: f64| ok(6.0 / (1.0 + x)), 0.0, 1e6, &[]).unwrap();
        assert!((v - 6.0 * (1e6f64 + 1.0).ln()).abs() < 1e-7);
    }

    #[test]
    fn step_with_breakpoint_is_exact() {
        let f = |x: f64| ok(if x > 0.7 { 3.0 } else { 0.5 });
        let v = integrate(f, 0.0, 2.0, &[0.7]).unwrap();
        assert!((v - (0.35 + 3.9)).abs() < 1e-12);
    }

    #[test]
    fn empty_interval() {
        assert_eq!(integrate(|_| ok(1.0), 1.0, 1.0, &[]).unwrap(), 0.0);
    }
}
