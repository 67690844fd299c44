//! Quadrature rules: the daily-grid trapezoid rule used for every integral
//! against the sales intensity and the mean claims measure, and an adaptive
//! Gauss–Kronrod rule for the stable-law integrals.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `∫ f dG` on a unit grid: segment `[t-1, t]` contributes
/// `(f(t-1) + f(t))/2 · (G(t) - G(t-1))`.
///
/// `f` and `g` are sampled on the same consecutive grid points.
pub fn trapezoid_against_increments<S: Scalar>(f: &[S], g: &[S]) -> S {
    assert_eq!(f.len(), g.len(), "integrand and integrator on different grids");
    f.windows(2).zip(g.windows(2)).fold(S::zero(), |acc, (fw, gw)| {
        acc + (fw[0] + fw[1]) / S::two() * (gw[1] - gw[0])
    })
}

/// Trapezoid weights on a unit grid of `len` points: `1/2` at the ends, `1` inside.
pub fn trapezoid_weights<S: Scalar>(len: usize) -> Vec<S> {
    let mut w = vec![S::one(); len];
    if len == 1 {
        w[0] = S::zero();
    } else if len > 1 {
        let half = S::one() / S::two();
        w[0] = half;
        w[len - 1] = half;
    }
    w
}

// 15-point Kronrod nodes and weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
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
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Bisects the interval with the largest error estimate until the summed
/// estimate drops below `max(abs_tol, rel_tol·|value|)`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<Integral> {
    if a == b {
        return Ok(Integral {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let (v, e) = kronrod15(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    let mut value = v;
    let mut error = e;
    let mut evaluations = 15;
    while error > abs_tol.max(rel_tol * value.abs()) {
        if pieces.len() >= max_intervals {
            return Err(Error::numerical(format!(
                "adaptive quadrature on [{a}, {b}] stalled at error {error:e} after {evaluations} evaluations"
            )));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, wv, we) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval exhausted at machine precision
            pieces.push((lo, hi, wv, 0.0));
            error -= we;
            continue;
        }
        let (lv, le) = kronrod15(&f, lo, mid);
        let (rv, re) = kronrod15(&f, mid, hi);
        evaluations += 30;
        value += lv + rv - wv;
        error += le + re - we;
        pieces.push((lo, mid, lv, le));
        pieces.push((mid, hi, rv, re));
        if !value.is_finite() {
            return Err(Error::numerical(format!("non-finite integrand on [{a}, {b}]")));
        }
    }
    // re-sum to shed accumulated update rounding
    let value = pieces.iter().map(|p| p.2).sum();
    let error = pieces.iter().map(|p| p.3).sum();
    Ok(Integral {
        value,
        error,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trapezoid_exact_on_constants() {
        let kappa = 0.37;
        let f = vec![kappa; 200];
        let g: Vec<f64> = (0..200).map(|t| 1.0 - (-0.01 * t as f64).exp()).collect();
        let got = trapezoid_against_increments(&f, &g);
        assert_relative_eq!(got, kappa * (g[199] - g[0]), epsilon = 1e-15);
    }

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let w: Vec<f64> = trapezoid_weights(11);
        assert_eq!(w.iter().sum::<f64>(), 10.0);
        assert_eq!(trapezoid_weights::<f64>(1), vec![0.0]);
    }

    #[test]
    fn kronrod_integrates_smooth_functions() {
        let r = integrate_adaptive(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-14, 0.0, 100).unwrap();
        assert_relative_eq!(r.value, 2.0, epsilon = 1e-14);
        let r = integrate_adaptive(|x| (-x * x).exp(), -10.0, 10.0, 1e-14, 0.0, 200).unwrap();
        assert_relative_eq!(r.value, std::f64::consts::PI.sqrt(), epsilon = 1e-13);
    }

    #[test]
    fn kronrod_handles_endpoint_singularity() {
        // ∫_0^1 x^{-1/2} dx = 2
        let r = integrate_adaptive(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10, 0.0, 500).unwrap();
        assert_relative_eq!(r.value, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn kronrod_reports_failure() {
        let r = integrate_adaptive(|x| (1.0 / x).sin() / x, 1e-300, 1.0, 1e-15, 0.0, 8);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }
}
