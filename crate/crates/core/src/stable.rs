//! α-stable laws in the S1 parameterisation.
//!
//! A variable `X ~ S1(α, β, σ, μ)` has characteristic function
//!
//! ```text
//! α ≠ 1:  exp(-σ^α |t|^α (1 - iβ sign(t) tan(πα/2)) + iμt)
//! α = 1:  exp(-σ |t| (1 + iβ (2/π) sign(t) ln|t|) + iμt)
//! ```
//!
//! The CDF is evaluated from Nolan's one-dimensional integral representation
//! (stated for the S0 parameterisation; for unit scale the S0 variable minus
//! `ζ = -β tan(πα/2)` is exactly the S1 variable). The integrand
//! `exp(-g(θ))` is monotone in θ and switches from 0 to 1 where `g(θ) = 1`;
//! the integral is split at that point before adaptive Gauss–Kronrod.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::integrate_adaptive;

/// Distance from α = 1 inside which the α = 1 formulas are used.
pub const ALPHA_ONE_GUARD: f64 = 1e-4;

const CDF_ABS_TOL: f64 = 1e-13;
const CDF_MAX_INTERVALS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StableParams {
    alpha: f64,
    beta: f64,
    sigma: f64,
    mu: f64,
}

impl StableParams {
    /// S1 parameters; requires `0 < α < 2`, `|β| ≤ 1`, `σ > 0`.
    pub fn new(alpha: f64, beta: f64, sigma: f64, mu: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::domain(format!("stable index α = {alpha} outside (0, 2)")));
        }
        if !(beta.abs() <= 1.0) {
            return Err(Error::domain(format!("skewness β = {beta} outside [-1, 1]")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("scale σ = {sigma} must be positive")));
        }
        if !mu.is_finite() {
            return Err(Error::domain("location μ must be finite"));
        }
        Ok(StableParams { alpha, beta, sigma, mu })
    }

    /// Builds S1 parameters from an S0 location.
    pub fn from_s0(alpha: f64, beta: f64, sigma: f64, mu0: f64) -> Result<Self> {
        let probe = StableParams::new(alpha, beta, sigma, 0.0)?;
        StableParams::new(alpha, beta, sigma, mu0 - probe.s0_shift())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    fn treat_as_alpha_one(&self) -> bool {
        (self.alpha - 1.0).abs() < ALPHA_ONE_GUARD
    }

    /// `μ₀ - μ₁`: `βσ tan(πα/2)` for α ≠ 1, `(2/π)βσ ln σ` for α = 1.
    fn s0_shift(&self) -> f64 {
        if self.treat_as_alpha_one() {
            2.0 / PI * self.beta * self.sigma * self.sigma.ln()
        } else {
            self.beta * self.sigma * (PI * self.alpha / 2.0).tan()
        }
    }

    /// Location in the S0 parameterisation.
    pub fn s0_location(&self) -> f64 {
        self.mu + self.s0_shift()
    }

    /// Maps `x` to the unit-scale, zero-location S1 variable.
    fn standardize(&self, x: f64) -> f64 {
        if self.treat_as_alpha_one() {
            (x - self.mu - 2.0 / PI * self.beta * self.sigma * self.sigma.ln()) / self.sigma
        } else {
            (x - self.mu) / self.sigma
        }
    }

    fn unstandardize(&self, z: f64) -> f64 {
        if self.treat_as_alpha_one() {
            self.sigma * z + self.mu + 2.0 / PI * self.beta * self.sigma * self.sigma.ln()
        } else {
            self.sigma * z + self.mu
        }
    }
}

/// Law of `Z_α(1)` when the claim-size mean exists (`1 < α < 2`): μ = 0, β = 1 and
/// `σ = (-Γ(2-α)/(α-1) · cos(πα/2))^{1/α}`.
pub fn params_mean_case(alpha: f64) -> Result<StableParams> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::domain(format!("mean-case index α = {alpha} outside (1, 2)")));
    }
    let base = -statrs::function::gamma::gamma(2.0 - alpha) / (alpha - 1.0) * (PI * alpha / 2.0).cos();
    StableParams::new(alpha, 1.0, base.powf(1.0 / alpha), 0.0)
}

/// Law of `Z_α(c₁)` for `0 < α < 1`: β = 1, `μ = -c₁α/(1-α)`,
/// `σ = (c₁ Γ(1-α) cos(πα/2))^{1/α}`.
pub fn params_zero_one_case(alpha: f64, c1: f64) -> Result<StableParams> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("index α = {alpha} outside (0, 1)")));
    }
    if !(c1 > 0.0) {
        return Err(Error::domain(format!("c1 = {c1} must be positive")));
    }
    let mu = -c1 * alpha / (1.0 - alpha);
    let base = c1 * statrs::function::gamma::gamma(1.0 - alpha) * (PI * alpha / 2.0).cos();
    StableParams::new(alpha, 1.0, base.powf(1.0 / alpha), mu)
}

/// Law of `Z_1(c₁)`: β = 1, `σ = c₁π/2`, `μ = c₁ J` with
/// `J = ∫_0^∞ (sin z - z 1{z ≤ 1}) z^{-2} dz`.
pub fn params_eq_one_case(c1: f64) -> Result<StableParams> {
    if !(c1 > 0.0) {
        return Err(Error::domain(format!("c1 = {c1} must be positive")));
    }
    StableParams::new(1.0, 1.0, c1 * FRAC_PI_2, c1 * eq_one_location_integral())
}

/// `J = ∫_0^∞ (sin z - z 1{z ≤ 1}) z^{-2} dz`, evaluated once by quadrature.
pub fn eq_one_location_integral() -> f64 {
    static J: OnceLock<f64> = OnceLock::new();
    *J.get_or_init(|| compute_location_integral().expect("location integral converges"))
}

fn compute_location_integral() -> Result<f64> {
    let near = |z: f64| {
        if z < 1e-3 {
            let z2 = z * z;
            -z / 6.0 + z * z2 / 120.0 - z * z2 * z2 / 5040.0
        } else {
            (z.sin() - z) / (z * z)
        }
    };
    let head = integrate_adaptive(near, 0.0, 1.0, 1e-16, 0.0, 200)?.value;

    // [1, π], then whole half-periods out to A = 200π
    let osc = |z: f64| z.sin() / (z * z);
    let mut body = integrate_adaptive(osc, 1.0, PI, 1e-16, 0.0, 200)?.value;
    let periods = 200;
    for k in 1..periods {
        let lo = k as f64 * PI;
        body += integrate_adaptive(osc, lo, lo + PI, 1e-17, 0.0, 200)?.value;
    }
    // ∫_A^∞ sin z / z² dz by repeated integration by parts
    let a = periods as f64 * PI;
    let (s, c) = a.sin_cos();
    let tail = c / a.powi(2) + 2.0 * s / a.powi(3) - 6.0 * c / a.powi(4) - 24.0 * s / a.powi(5) + 120.0 * c / a.powi(6);
    Ok(head + body + tail)
}

/// `P[X ≤ x]`.
pub fn stable_cdf(params: &StableParams, x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::domain("CDF argument is NaN"));
    }
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    if x == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let z = params.standardize(x);
    let f = if params.treat_as_alpha_one() {
        alpha_one_cdf(params.beta, z)?
    } else {
        general_cdf(params.alpha, params.beta, z)?
    };
    Ok(f.clamp(0.0, 1.0))
}

/// Unit-scale CDF for α ≠ 1 on the S1 variable `z`.
fn general_cdf(alpha: f64, beta: f64, z: f64) -> Result<f64> {
    if z < 0.0 {
        return Ok(1.0 - general_cdf_nonneg(alpha, -beta, -z)?);
    }
    general_cdf_nonneg(alpha, beta, z)
}

fn general_cdf_nonneg(alpha: f64, beta: f64, z: f64) -> Result<f64> {
    let theta0 = (beta * (PI * alpha / 2.0).tan()).atan() / alpha;
    let at_edge = (FRAC_PI_2 - theta0) / PI;
    if z == 0.0 {
        return Ok(at_edge);
    }
    let base = if alpha < 1.0 { at_edge } else { 1.0 };
    let lo = -theta0;
    let hi = FRAC_PI_2;
    if lo >= hi {
        return Ok(base);
    }
    let exponent = alpha / (alpha - 1.0);
    let log_scale = exponent * z.ln();
    let inv = 1.0 / (alpha - 1.0);
    let log_cos_at0 = (alpha * theta0).cos().ln();
    let log_g = |theta: f64| {
        log_scale + inv * (log_cos_at0 + theta.cos().ln()) - exponent * (alpha * (theta0 + theta)).sin().ln()
            + (alpha * theta0 + (alpha - 1.0) * theta).cos().ln()
    };
    let integral = integrate_split(log_g, lo, hi)?;
    Ok(base + (1.0 - alpha).signum() * integral / PI)
}

/// Unit-scale CDF for α = 1.
fn alpha_one_cdf(beta: f64, z: f64) -> Result<f64> {
    if beta.abs() < 1e-12 {
        return Ok(0.5 + z.atan() / PI);
    }
    if beta < 0.0 {
        return Ok(1.0 - alpha_one_cdf(-beta, -z)?);
    }
    let log_shift = -PI * z / (2.0 * beta);
    let log_two_over_pi = (2.0 / PI).ln();
    let log_g = |theta: f64| {
        let lift = FRAC_PI_2 + beta * theta;
        log_shift + log_two_over_pi + lift.ln() - theta.cos().ln() + lift * theta.tan() / beta
    };
    let integral = integrate_split(log_g, -FRAC_PI_2, FRAC_PI_2)?;
    Ok(integral / PI)
}

/// `∫_lo^hi exp(-exp(log_g(θ))) dθ` for monotone `log_g`, split where `log_g = 0`.
fn integrate_split<G: Fn(f64) -> f64>(log_g: G, lo: f64, hi: f64) -> Result<f64> {
    let integrand = |theta: f64| {
        let lg = log_g(theta);
        if lg.is_nan() || lg > 709.0 {
            0.0
        } else {
            (-lg.exp()).exp()
        }
    };
    let probe_lo = log_g(lo + (hi - lo) * 1e-12);
    let increasing = match (probe_lo.is_nan(), log_g(hi - (hi - lo) * 1e-12)) {
        (false, probe_hi) if !probe_hi.is_nan() => probe_hi > probe_lo,
        _ => true,
    };
    // bisection for the crossing log_g = 0
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let v = log_g(mid);
        let below = if v.is_nan() { !increasing } else { v < 0.0 };
        if below == increasing {
            a = mid;
        } else {
            b = mid;
        }
    }
    let split = 0.5 * (a + b);
    let left = integrate_adaptive(integrand, lo, split, CDF_ABS_TOL, 0.0, CDF_MAX_INTERVALS)?;
    let right = integrate_adaptive(integrand, split, hi, CDF_ABS_TOL, 0.0, CDF_MAX_INTERVALS)?;
    Ok(left.value + right.value)
}

/// Smallest `x` with `P[X ≤ x] ≥ p`, found by bracketing and bisection.
pub fn stable_quantile(params: &StableParams, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    let cdf = |z: f64| -> Result<f64> { stable_cdf(params, params.unstandardize(z)) };
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    let mut guard = 0;
    while cdf(lo)? > p {
        lo *= 2.0;
        guard += 1;
        if guard > 1100 {
            return Err(Error::numerical(format!("cannot bracket the {p}-quantile from below")));
        }
    }
    guard = 0;
    while cdf(hi)? < p {
        hi *= 2.0;
        guard += 1;
        if guard > 1100 {
            return Err(Error::numerical(format!("cannot bracket the {p}-quantile from above")));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-13 * (1.0 + mid.abs()) || mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(params.unstandardize(0.5 * (lo + hi)))
}

/// One draw by the Chambers–Mallows–Stuck transform, returned in S1.
pub fn sample_stable<R: Rng + ?Sized>(params: &StableParams, rng: &mut R) -> f64 {
    let u = PI * (rng.random::<f64>() - 0.5);
    let e: f64 = Exp1.sample(rng);
    let (alpha, beta) = (params.alpha, params.beta);
    let z = if params.treat_as_alpha_one() {
        let lift = FRAC_PI_2 + beta * u;
        2.0 / PI * (lift * u.tan() - beta * ((FRAC_PI_2 * e * u.cos()) / lift).ln())
    } else {
        let tan = (PI * alpha / 2.0).tan();
        let b = (beta * tan).atan() / alpha;
        let s = (1.0 + beta * beta * tan * tan).powf(1.0 / (2.0 * alpha));
        s * (alpha * (u + b)).sin() / u.cos().powf(1.0 / alpha)
            * ((u - alpha * (u + b)).cos() / e).powf((1.0 - alpha) / alpha)
    };
    params.unstandardize(z)
}
