//! Limit parameters `(c₁, c₂, μ̃, σ̃²)` and the normal and stable
//! approximations to the claim count and the total cost.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::claims::MomentGrids;
use crate::error::{Error, Result};
use crate::model::{MeanClaimsMeasure, RebateFunction, TimeHorizon};
use crate::quadrature::{trapezoid_against_increments, trapezoid_weights};
use crate::sales::{ChiMoments, CumulativeIntensity};
use crate::stable::{
    params_eq_one_case, params_mean_case, params_zero_one_case, stable_cdf, stable_quantile, StableParams,
    ALPHA_ONE_GUARD,
};

/// Negative σ̃² smaller than this in magnitude is treated as rounding.
pub const VARIANCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitParams {
    pub c1: f64,
    pub c2: f64,
    pub mu_tilde: f64,
    pub sigma2_tilde: f64,
    pub n: u64,
}

impl LimitParams {
    pub fn new(c1: f64, c2: f64, mu_tilde: f64, sigma2_tilde: f64, n: u64) -> Result<Self> {
        if !(c1 >= 0.0 && c2 >= 0.0 && sigma2_tilde >= 0.0) || !mu_tilde.is_finite() {
            return Err(Error::validation(format!(
                "limit parameters out of range: c1 = {c1}, c2 = {c2}, σ̃² = {sigma2_tilde}, μ̃ = {mu_tilde}"
            )));
        }
        if n == 0 {
            return Err(Error::domain("n must be at least 1"));
        }
        Ok(LimitParams {
            c1,
            c2,
            mu_tilde,
            sigma2_tilde,
            n,
        })
    }

    /// Builds the parameters for a horizon, taking `n` from it.
    pub fn for_horizon(c1: f64, c2: f64, mu_tilde: f64, sigma2_tilde: f64, horizon: &TimeHorizon) -> Result<Self> {
        LimitParams::new(c1, c2, mu_tilde, sigma2_tilde, horizon.n())
    }
}

/// `c₁ = ∫ f̂₁ dν̂`, `c₂ = ∫ f̂₂ dν̂` by the trapezoid rule on the daily grid.
pub fn compute_c1_c2<I: CumulativeIntensity + ?Sized>(grids: &MomentGrids, nu: &I) -> (f64, f64) {
    let g: Vec<f64> = grids.days().map(|t| nu.nu(t as f64)).collect();
    (
        trapezoid_against_increments(&grids.f1, &g),
        trapezoid_against_increments(&grids.f2, &g),
    )
}

/// Quadrature weights of `r(u) m̂(du)` on `u = 0..=W`: trapezoid for the
/// density, exact point masses for the atoms.
pub fn weighted_measure_weights(mhat: &MeanClaimsMeasure<f64>, rebate: &RebateFunction<f64>) -> Vec<f64> {
    let w = mhat.warranty() as usize;
    let mut weights: Vec<f64> = trapezoid_weights::<f64>(w + 1)
        .into_iter()
        .enumerate()
        .map(|(u, tw)| tw * rebate.eval(u as f64) * mhat.density(u as f64))
        .collect();
    weights[0] += mhat.atom_zero() * rebate.eval(0.0);
    weights[w] += mhat.atom_warranty() * rebate.eval(w as f64);
    weights
}

/// `μ̃ = ∫ E[χ(u)] r(u) m̂(du)`, `σ̃² = ∫∫ Cov[χ(u), χ(v)] r(u) r(v) m̂(du) m̂(dv)`.
pub fn compute_mu_sigma(
    chi: &ChiMoments,
    mhat: &MeanClaimsMeasure<f64>,
    rebate: &RebateFunction<f64>,
) -> Result<(f64, f64)> {
    compute_mu_sigma_weighted(chi, &weighted_measure_weights(mhat, rebate))
}

/// [`compute_mu_sigma`] with precomputed daily weights of `r·m`.
pub fn compute_mu_sigma_weighted(chi: &ChiMoments, weights: &[f64]) -> Result<(f64, f64)> {
    let size = chi.size();
    if weights.len() != size {
        return Err(Error::domain(format!(
            "χ grid has {size} ages but the measure spans {} days",
            weights.len()
        )));
    }
    let mu = weights.iter().zip(&chi.mean).map(|(w, m)| w * m).sum();
    let mut sigma2 = 0.0;
    for (u, wu) in weights.iter().enumerate() {
        if *wu == 0.0 {
            continue;
        }
        let row = &chi.cov[u * size..(u + 1) * size];
        sigma2 += wu * row.iter().zip(weights).map(|(c, wv)| c * wv).sum::<f64>();
    }
    if sigma2 < 0.0 {
        if sigma2 < -VARIANCE_TOLERANCE {
            return Err(Error::numerical(format!(
                "σ̃² = {sigma2:e} is negative: the χ covariance is not positive semidefinite"
            )));
        }
        log::warn!("σ̃² = {sigma2:e} rounded up to 0");
        sigma2 = 0.0;
    }
    Ok((mu, sigma2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxKind {
    Normal,
    Stable,
}

/// Law of `location + scale·(Z + shift)` with `Z` standard normal or stable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostApproximation {
    pub kind: ApproxKind,
    pub location: f64,
    pub scale: f64,
    pub stable: Option<StableParams>,
    pub shift: f64,
}

impl CostApproximation {
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::domain(format!(
                "normal approximation needs a finite mean and positive variance, got {mean}, {variance}"
            )));
        }
        Ok(CostApproximation {
            kind: ApproxKind::Normal,
            location: mean,
            scale: variance.sqrt(),
            stable: None,
            shift: 0.0,
        })
    }

    pub fn stable(location: f64, scale: f64, law: StableParams, shift: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !location.is_finite() || !shift.is_finite() {
            return Err(Error::domain(format!(
                "stable approximation needs positive scale, got {scale}"
            )));
        }
        Ok(CostApproximation {
            kind: ApproxKind::Stable,
            location,
            scale,
            stable: Some(law),
            shift,
        })
    }

    /// Mean for the normal kind; the median otherwise is available through [`Self::quantile`].
    pub fn mean(&self) -> Option<f64> {
        match self.kind {
            ApproxKind::Normal => Some(self.location),
            ApproxKind::Stable => None,
        }
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        let z = (x - self.location) / self.scale - self.shift;
        match (self.kind, &self.stable) {
            (ApproxKind::Normal, _) => Ok(normal_cdf(z)),
            (ApproxKind::Stable, Some(law)) => stable_cdf(law, z),
            (ApproxKind::Stable, None) => Err(Error::validation("stable approximation without a law")),
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        let z = match (self.kind, &self.stable) {
            (ApproxKind::Normal, _) => normal_quantile(p)?,
            (ApproxKind::Stable, Some(law)) => stable_quantile(law, p)?,
            (ApproxKind::Stable, None) => return Err(Error::validation("stable approximation without a law")),
        };
        Ok(self.location + self.scale * (z + self.shift))
    }
}

/// What [`evaluate`] computes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Query {
    Cdf(f64),
    Quantile(f64),
}

pub fn evaluate(approx: &CostApproximation, what: Query) -> Result<f64> {
    match what {
        Query::Cdf(x) => approx.cdf(x),
        Query::Quantile(p) => approx.quantile(p),
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    let z = -SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step against the CDF tightens the inverse to rounding level
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf > 0.0 {
        // Φ(z) - p, evaluated in whichever tail keeps precision
        let gap = if z < 0.0 {
            normal_cdf(z) - p
        } else {
            (1.0 - p) - normal_cdf(-z)
        };
        return Ok(z - gap / pdf);
    }
    Ok(z)
}

/// Claim count `Rⁿ ≈ N(n c₁ + √n μ̃, n(c₂ + σ̃²))`.
pub fn claims_count_approx(lp: &LimitParams) -> Result<CostApproximation> {
    let n = lp.n as f64;
    CostApproximation::normal(n * lp.c1 + n.sqrt() * lp.mu_tilde, n * (lp.c2 + lp.sigma2_tilde))
}

/// Finite-variance sizes: mean `n c₁ E + √n E μ̃`, variance `nV(c₁ + E²/V (c₂ + σ̃²))`.
pub fn cost_approx_normal(lp: &LimitParams, e: f64, v: f64) -> Result<CostApproximation> {
    if !(v > 0.0) {
        return Err(Error::domain(format!("claim-size variance must be positive, got {v}")));
    }
    let n = lp.n as f64;
    let mean = n * lp.c1 * e + (n * v).sqrt() * (e / v.sqrt()) * lp.mu_tilde;
    let variance = n * v * (lp.c1 + e * e / v * (lp.c2 + lp.sigma2_tilde));
    CostApproximation::normal(mean, variance)
}

/// Sizes with `1 < α < 2`: `n c₁ E + b c₁^{1/α} Z` with `Z` the mean-case stable law.
pub fn cost_approx_stable_12(lp: &LimitParams, e: f64, alpha: f64, b_n: f64) -> Result<CostApproximation> {
    if !(b_n > 0.0) {
        return Err(Error::domain(format!("b(n) must be positive, got {b_n}")));
    }
    if !(lp.c1 > 0.0) {
        return Err(Error::domain("stable approximation needs c1 > 0"));
    }
    let law = params_mean_case(alpha)?;
    let n = lp.n as f64;
    CostApproximation::stable(n * lp.c1 * e, b_n * lp.c1.powf(1.0 / alpha), law, 0.0)
}

/// Sizes with `0 < α ≤ 1`: `n c₁^{1/α} e(n) + b (Z + 1{α=1} c₁ ln c₁)`.
pub fn cost_approx_stable_01(lp: &LimitParams, alpha: f64, b_n: f64, e_n: f64) -> Result<CostApproximation> {
    if !(alpha > 0.0 && alpha <= 1.0 + ALPHA_ONE_GUARD) {
        return Err(Error::domain(format!("index α = {alpha} outside (0, 1]")));
    }
    if !(b_n > 0.0) {
        return Err(Error::domain(format!("b(n) must be positive, got {b_n}")));
    }
    if !(lp.c1 > 0.0) {
        return Err(Error::domain("stable approximation needs c1 > 0"));
    }
    let n = lp.n as f64;
    if (alpha - 1.0).abs() < ALPHA_ONE_GUARD {
        let law = params_eq_one_case(lp.c1)?;
        CostApproximation::stable(n * lp.c1 * e_n, b_n, law, lp.c1 * lp.c1.ln())
    } else {
        let law = params_zero_one_case(alpha, lp.c1)?;
        CostApproximation::stable(n * lp.c1.powf(1.0 / alpha) * e_n, b_n, law, 0.0)
    }
}

/// Pro-rata refunds: `N(n c_b c₁ + c_b √n μ̃, c_b² n (c₂ + σ̃²))`.
pub fn cost_approx_prorata(lp: &LimitParams, c_b: f64) -> Result<CostApproximation> {
    if !(c_b > 0.0) {
        return Err(Error::domain(format!("unit price must be positive, got {c_b}")));
    }
    let n = lp.n as f64;
    CostApproximation::normal(
        n * c_b * lp.c1 + c_b * n.sqrt() * lp.mu_tilde,
        c_b * c_b * n * (lp.c2 + lp.sigma2_tilde),
    )
}

/// Two-sided tail probability `2 min(u, 1 - u)`.
pub fn extremeness(u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::domain(format!("probability {u} outside [0, 1]")));
    }
    Ok(2.0 * u.min(1.0 - u))
}

/// Default quantile levels of the report table.
pub const REPORT_LEVELS: [f64; 7] = [0.5, 0.75, 0.8, 0.85, 0.9, 0.95, 0.99];

pub fn quantile_table(approx: &CostApproximation, levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    levels.iter().map(|p| Ok((*p, approx.quantile(*p)?))).collect()
}
