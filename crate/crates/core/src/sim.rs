//! Synthetic sales, claim-time measures and claim sizes; exact realisation
//! of the claim count and cost; Monte Carlo checks of the limit laws.
//!
//! Every replication draws from `ChaCha20Rng::seed_from_u64(seed)` with the
//! stream set to the replication index, so results are reproducible and
//! independent of how replications are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, Gamma, LogNormal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::claims::MomentGrids;
use crate::cost::{
    claims_count_approx, compute_c1_c2, compute_mu_sigma_weighted, cost_approx_normal, cost_approx_prorata,
    cost_approx_stable_01, cost_approx_stable_12, CostApproximation, LimitParams,
};
use crate::error::{Error, Result};
use crate::model::{claim_age_window, ClaimsMeasure, MeanClaimsMeasure, RebateFunction, TimeHorizon};
use crate::quadrature::{integrate_adaptive, trapezoid_weights};
use crate::sales::{chi_moments, BassParams, CumulativeIntensity, GaussianLimit, LinearIntensity};
use crate::tail::quantile_type7;

/// Generator for replication `rep` of a study seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Deterministic part `ν` of a simulated sales process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intensity {
    Linear(LinearIntensity),
    Bass(BassParams),
}

impl CumulativeIntensity for Intensity {
    fn nu(&self, t: f64) -> f64 {
        match self {
            Intensity::Linear(l) => l.nu(t),
            Intensity::Bass(b) => b.nu(t),
        }
    }

    fn inverse(&self, y: f64) -> f64 {
        match self {
            Intensity::Linear(l) => l.inverse(y),
            Intensity::Bass(b) => CumulativeIntensity::inverse(b, y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SalesProcessSpec {
    /// Renewal arrivals on the scale `τ ∈ [0, n(W + T + offset)]`, mapped to
    /// sale day `τ/n - W`. Inter-arrival times have mean `φ₁` and variance `φ₂`
    /// (deterministic when `φ₂ = 0`, gamma otherwise).
    Renewal { mean: f64, variance: f64 },
    /// Poisson process with cumulative intensity `n·ν`.
    Nhpp { intensity: Intensity },
    /// Poisson process directed by `Λ = nν + √n·G`, `G` a zero-started AR(1)
    /// on days with coefficient `rho` and innovation sd `sd`; increments of
    /// `Λ` are clipped at zero.
    Cox { intensity: Intensity, rho: f64, sd: f64 },
}

impl SalesProcessSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SalesProcessSpec::Renewal { mean, variance } => {
                if !(mean > 0.0 && variance >= 0.0) {
                    return Err(Error::domain(format!(
                        "renewal law needs φ₁ > 0 and φ₂ ≥ 0, got {mean}, {variance}"
                    )));
                }
            }
            SalesProcessSpec::Nhpp { .. } => {}
            SalesProcessSpec::Cox { rho, sd, .. } => {
                if !(rho.abs() < 1.0 && sd >= 0.0) {
                    return Err(Error::domain(format!(
                        "Cox perturbation needs |ρ| < 1 and sd ≥ 0, got {rho}, {sd}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The deterministic `ν` of the sales law.
    pub fn intensity(&self, horizon: &TimeHorizon) -> Intensity {
        match *self {
            SalesProcessSpec::Renewal { mean, .. } => Intensity::Linear(LinearIntensity {
                origin: -f64::from(horizon.warranty()),
                rate: 1.0 / mean,
            }),
            SalesProcessSpec::Nhpp { intensity } | SalesProcessSpec::Cox { intensity, .. } => intensity,
        }
    }
}

fn sales_span(horizon: &TimeHorizon) -> (f64, f64) {
    let (_, end) = horizon.window();
    (-f64::from(horizon.warranty()), end as f64)
}

pub fn simulate_sales(spec: &SalesProcessSpec, horizon: &TimeHorizon, seed: u64) -> Result<Vec<f64>> {
    simulate_sales_with(spec, horizon, &mut replication_rng(seed, 0))
}

/// Sale days in `[-W, T + offset]`, ascending.
pub fn simulate_sales_with<R: Rng + ?Sized>(
    spec: &SalesProcessSpec,
    horizon: &TimeHorizon,
    rng: &mut R,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = horizon.n() as f64;
    let (start, end) = sales_span(horizon);
    match *spec {
        SalesProcessSpec::Renewal { mean, variance } => {
            let limit = n * (end - start);
            let gamma = if variance > 0.0 {
                Some(Gamma::new(mean * mean / variance, variance / mean).map_err(|e| Error::domain(e.to_string()))?)
            } else {
                None
            };
            let mut out = Vec::new();
            let mut tau = 0.0;
            loop {
                tau += match &gamma {
                    Some(g) => g.sample(rng),
                    None => mean,
                };
                if tau > limit {
                    break;
                }
                out.push(tau / n + start);
            }
            Ok(out)
        }
        SalesProcessSpec::Nhpp { intensity } => Ok(time_changed_poisson(rng, n, &intensity, start, end)),
        SalesProcessSpec::Cox { intensity, rho, sd } => {
            if sd == 0.0 {
                return Ok(time_changed_poisson(rng, n, &intensity, start, end));
            }
            let days = (end - start).round() as usize;
            let root = n.sqrt();
            let mut lambda = Vec::with_capacity(days + 1);
            lambda.push(0.0);
            let mut g = 0.0;
            for k in 1..=days {
                let next = rho * g + sd * rng.sample::<f64, _>(StandardNormal);
                let t = start + k as f64;
                let inc = n * (intensity.nu(t) - intensity.nu(t - 1.0)) + root * (next - g);
                g = next;
                lambda.push(lambda[k - 1] + inc.max(0.0));
            }
            let mut out = Vec::new();
            let mut y = 0.0;
            let mut k = 0;
            loop {
                y += rng.sample::<f64, _>(Exp1);
                if y > lambda[days] {
                    break;
                }
                while lambda[k + 1] < y {
                    k += 1;
                }
                let frac = (y - lambda[k]) / (lambda[k + 1] - lambda[k]);
                out.push(start + k as f64 + frac);
            }
            Ok(out)
        }
    }
}

/// Points `ν⁻¹(Γ_k/n)` for unit-rate arrivals `Γ_k` between `nν(start)` and `nν(end)`.
fn time_changed_poisson<R: Rng + ?Sized, I: CumulativeIntensity>(
    rng: &mut R,
    n: f64,
    intensity: &I,
    start: f64,
    end: f64,
) -> Vec<f64> {
    let (lo, hi) = (n * intensity.nu(start), n * intensity.nu(end));
    let mut out = Vec::new();
    let mut y = lo;
    loop {
        y += rng.sample::<f64, _>(Exp1);
        if y > hi {
            break;
        }
        out.push(intensity.inverse(y / n).clamp(start, end));
    }
    out
}

/// Law of an item's claim ages.
#[derive(Debug, Clone, PartialEq)]
pub enum ClaimsLawSpec {
    /// Poisson random measure with mean `m`: Poisson points on `(0, W)` with
    /// the linear density plus Poisson counts at the atoms.
    PoissonMeasure(MeanClaimsMeasure<f64>),
    /// At most one claim, at the item's lifetime if it falls in `[0, W]`.
    SingleLifetime(LifetimeLaw),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LifetimeLaw {
    /// Lifetime distributed as `m` on `[0, W]` (total mass ≤ 1), beyond `W` otherwise.
    Measure(MeanClaimsMeasure<f64>),
    /// Lifetime fixed at the given age.
    Degenerate(f64),
}

impl ClaimsLawSpec {
    pub fn validate(&self, warranty: f64) -> Result<()> {
        match self {
            ClaimsLawSpec::PoissonMeasure(m) => check_warranty(m, warranty),
            ClaimsLawSpec::SingleLifetime(LifetimeLaw::Measure(m)) => {
                check_warranty(m, warranty)?;
                if m.total_mass() > 1.0 + 1e-12 {
                    return Err(Error::domain(format!(
                        "lifetime law has mass {} on [0, W]",
                        m.total_mass()
                    )));
                }
                Ok(())
            }
            ClaimsLawSpec::SingleLifetime(LifetimeLaw::Degenerate(a)) => {
                if !(*a >= 0.0) {
                    return Err(Error::domain(format!("lifetime {a} is negative")));
                }
                Ok(())
            }
        }
    }

    /// `∫_[lo, hi] g dm` for the mean measure `m` of the law.
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G, lo: f64, hi: f64) -> Result<f64> {
        let m = match self {
            ClaimsLawSpec::PoissonMeasure(m) | ClaimsLawSpec::SingleLifetime(LifetimeLaw::Measure(m)) => m,
            ClaimsLawSpec::SingleLifetime(LifetimeLaw::Degenerate(a)) => {
                return Ok(if *a >= lo && *a <= hi { g(*a) } else { 0.0 });
            }
        };
        let mut total = 0.0;
        if hi > lo {
            total += integrate_adaptive(|y| g(y) * m.density(y), lo, hi, 1e-15, 1e-14, 500)?.value;
        }
        if lo <= 0.0 && hi >= 0.0 {
            total += g(0.0) * m.atom_zero();
        }
        if lo <= m.warranty() && hi >= m.warranty() {
            total += g(m.warranty()) * m.atom_warranty();
        }
        Ok(total)
    }

    /// Daily quadrature weights of `g(u) m(du)` on `u = 0..=W`.
    pub fn daily_weights<G: Fn(f64) -> f64>(&self, g: G, warranty: u32) -> Vec<f64> {
        let w = warranty as usize;
        match self {
            ClaimsLawSpec::PoissonMeasure(m) | ClaimsLawSpec::SingleLifetime(LifetimeLaw::Measure(m)) => {
                let mut out: Vec<f64> = trapezoid_weights::<f64>(w + 1)
                    .into_iter()
                    .enumerate()
                    .map(|(u, tw)| tw * g(u as f64) * m.density(u as f64))
                    .collect();
                out[0] += m.atom_zero() * g(0.0);
                out[w] += m.atom_warranty() * g(w as f64);
                out
            }
            ClaimsLawSpec::SingleLifetime(LifetimeLaw::Degenerate(a)) => {
                let mut out = vec![0.0; w + 1];
                if *a <= w as f64 {
                    let lo = a.floor() as usize;
                    let frac = a - lo as f64;
                    out[lo] += (1.0 - frac) * g(*a);
                    if frac > 0.0 {
                        out[lo + 1] += frac * g(*a);
                    }
                }
                out
            }
        }
    }
}

fn check_warranty(m: &MeanClaimsMeasure<f64>, warranty: f64) -> Result<()> {
    if m.warranty() != warranty {
        return Err(Error::domain(format!(
            "claims law is defined on [0, {}] but the warranty is {warranty}",
            m.warranty()
        )));
    }
    Ok(())
}

pub fn simulate_claims_measure(spec: &ClaimsLawSpec, seed: u64) -> Result<ClaimsMeasure<f64>> {
    Ok(simulate_claims_measure_with(spec, &mut replication_rng(seed, 0)))
}

pub fn simulate_claims_measure_with<R: Rng + ?Sized>(spec: &ClaimsLawSpec, rng: &mut R) -> ClaimsMeasure<f64> {
    match spec {
        ClaimsLawSpec::PoissonMeasure(m) => {
            let w = m.warranty();
            let mut pts = vec![0.0; poisson(rng, m.atom_zero()) as usize];
            let top = m.max_density();
            if top > 0.0 {
                for _ in 0..poisson(rng, top * w) {
                    let y = w * rng.random::<f64>();
                    if rng.random::<f64>() * top < m.density(y) && y > 0.0 {
                        pts.push(y);
                    }
                }
            }
            for _ in 0..poisson(rng, m.atom_warranty()) {
                pts.push(w);
            }
            ClaimsMeasure::new(pts, w).expect("points drawn inside [0, W]")
        }
        ClaimsLawSpec::SingleLifetime(LifetimeLaw::Degenerate(a)) => single_point(*a, None),
        ClaimsLawSpec::SingleLifetime(LifetimeLaw::Measure(m)) => {
            let w = m.warranty();
            let u = rng.random::<f64>();
            let density_mass = m.total_mass() - m.atom_zero() - m.atom_warranty();
            let age = if u < m.atom_zero() {
                Some(0.0)
            } else if u < m.atom_zero() + density_mass {
                Some(invert_linear_mass(m, u - m.atom_zero()))
            } else if u < m.total_mass() {
                Some(w)
            } else {
                None
            };
            match age {
                Some(a) => single_point(a, Some(w)),
                None => ClaimsMeasure::empty(),
            }
        }
    }
}

fn single_point(age: f64, warranty: Option<f64>) -> ClaimsMeasure<f64> {
    let w = warranty.unwrap_or(f64::INFINITY);
    if age <= w {
        ClaimsMeasure::new(vec![age], w.max(age)).expect("age inside range")
    } else {
        ClaimsMeasure::empty()
    }
}

/// Solves `a y²/2 + b y = q` on `[0, W]`.
fn invert_linear_mass(m: &MeanClaimsMeasure<f64>, q: f64) -> f64 {
    let (a, b) = (m.slope(), m.intercept());
    let y = if a.abs() < 1e-300 {
        q / b
    } else {
        // stable root of the quadratic
        2.0 * q / (b + (b * b + 2.0 * a * q).max(0.0).sqrt())
    };
    y.clamp(0.0, m.warranty())
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SizeLawSpec {
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    /// `P[X > x] = (scale/x)^α` for `x ≥ scale`.
    Pareto {
        alpha: f64,
        scale: f64,
    },
    /// Resampling with replacement from observed sizes.
    Empirical(Vec<f64>),
}

impl SizeLawSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SizeLawSpec::LogNormal { sigma, mu } => {
                if !(*sigma >= 0.0) || !mu.is_finite() {
                    return Err(Error::domain("lognormal needs a finite μ and σ ≥ 0"));
                }
            }
            SizeLawSpec::Pareto { alpha, scale } => {
                if !(*alpha > 0.0 && *scale > 0.0) {
                    return Err(Error::domain("Pareto law needs α > 0 and a positive scale"));
                }
            }
            SizeLawSpec::Empirical(v) => {
                if v.is_empty() || v.iter().any(|x| !(*x >= 0.0)) {
                    return Err(Error::domain(
                        "bootstrap sizes must be a non-empty set of non-negative values",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            SizeLawSpec::LogNormal { mu, sigma } => LogNormal::new(*mu, *sigma).expect("validated").sample(rng),
            SizeLawSpec::Pareto { alpha, scale } => scale * (1.0 - rng.random::<f64>()).powf(-1.0 / alpha),
            SizeLawSpec::Empirical(v) => v[rng.random_range(0..v.len())],
        }
    }

    /// `(E, V)` when the first two moments exist.
    pub fn moments(&self) -> (Option<f64>, Option<f64>) {
        match self {
            SizeLawSpec::LogNormal { mu, sigma } => {
                let s2 = sigma * sigma;
                let e = (mu + s2 / 2.0).exp();
                (Some(e), Some((s2.exp() - 1.0) * e * e))
            }
            SizeLawSpec::Pareto { alpha, scale } => {
                let e = (*alpha > 1.0).then(|| alpha * scale / (alpha - 1.0));
                let v = (*alpha > 2.0).then(|| scale * scale * alpha / ((alpha - 1.0).powi(2) * (alpha - 2.0)));
                (e, v)
            }
            SizeLawSpec::Empirical(v) => {
                let n = v.len() as f64;
                let e = v.iter().sum::<f64>() / n;
                let var = if v.len() > 1 {
                    Some(v.iter().map(|x| (x - e).powi(2)).sum::<f64>() / (n - 1.0))
                } else {
                    None
                };
                (Some(e), var)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Every in-window claim is paid at its full size.
    FreeReplacement,
    /// The first claim of an item, if in the window, refunds `c_b r(age)`.
    ProRata,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Realization {
    pub count: u64,
    pub cost: f64,
}

/// Exact `(Rⁿ, COSTⁿ)`: claims with sale day plus age inside the forecast window.
///
/// Free replacement consumes `sizes` in the order claims are visited (sales
/// in order, ages ascending); pro-rata ignores them and pays
/// `unit_price · r(age)` on first claims.
pub fn realize_cost(
    sales: &[f64],
    measures: &[ClaimsMeasure<f64>],
    sizes: &[f64],
    rebate: &RebateFunction<f64>,
    horizon: &TimeHorizon,
    policy: Policy,
) -> Result<Realization> {
    if sales.len() != measures.len() {
        return Err(Error::domain(format!(
            "{} sales but {} claim measures",
            sales.len(),
            measures.len()
        )));
    }
    let (lo, hi) = horizon.window();
    let (lo, hi) = (lo as f64, hi as f64);
    let w = f64::from(horizon.warranty());
    let mut out = Realization { count: 0, cost: 0.0 };
    let mut next_size = 0;
    for (s, m) in sales.iter().zip(measures) {
        let ages = match policy {
            Policy::FreeReplacement => m.points(),
            Policy::ProRata => &m.points()[..m.points().len().min(1)],
        };
        for c in ages {
            if *c < 0.0 || *c > w {
                continue;
            }
            let t = s + c;
            if t < lo || t > hi {
                continue;
            }
            out.count += 1;
            match policy {
                Policy::FreeReplacement => {
                    let x = sizes
                        .get(next_size)
                        .ok_or_else(|| Error::domain(format!("claim-size stream exhausted after {next_size} draws")))?;
                    out.cost += x;
                    next_size += 1;
                }
                Policy::ProRata => out.cost += rebate.unit_price() * rebate.eval(*c),
            }
        }
    }
    Ok(out)
}

/// Number of claims [`realize_cost`] will visit, i.e. sizes it needs.
pub fn qualifying_claims(
    sales: &[f64],
    measures: &[ClaimsMeasure<f64>],
    horizon: &TimeHorizon,
    policy: Policy,
) -> usize {
    let (lo, hi) = horizon.window();
    sales
        .iter()
        .zip(measures)
        .map(|(s, m)| {
            let ages = match policy {
                Policy::FreeReplacement => m.points(),
                Policy::ProRata => &m.points()[..m.points().len().min(1)],
            };
            ages.iter()
                .filter(|c| (lo as f64..=hi as f64).contains(&(s + *c)))
                .count()
        })
        .sum()
}

/// A complete synthetic model: sales law, claims law, sizes and policy.
#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub horizon: TimeHorizon,
    pub sales: SalesProcessSpec,
    pub claims: ClaimsLawSpec,
    pub sizes: SizeLawSpec,
    pub rebate: RebateFunction<f64>,
    pub policy: Policy,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        self.sales.validate()?;
        self.claims.validate(f64::from(self.horizon.warranty()))?;
        self.sizes.validate()?;
        if self.rebate.warranty() != f64::from(self.horizon.warranty()) {
            return Err(Error::domain("rebate function and horizon disagree on W"));
        }
        // pro-rata pays on the first failure only, so the law must give at most one claim
        if self.policy == Policy::ProRata && matches!(self.claims, ClaimsLawSpec::PoissonMeasure(_)) {
            return Err(Error::validation(
                "the pro-rata policy needs a single-lifetime claims law, not a Poisson measure",
            ));
        }
        Ok(())
    }
}

/// Fluctuation limit of the sales law on `[-W, T + offset]`.
pub fn theoretical_sales_limit(spec: &SalesProcessSpec, horizon: &TimeHorizon) -> GaussianLimit {
    let (start, end) = sales_span(horizon);
    let (first, last) = (start as i64, end as i64);
    let nu = spec.intensity(horizon);
    let base = nu.nu(start);
    match *spec {
        SalesProcessSpec::Renewal { mean, variance } => {
            let k = variance / mean.powi(3);
            GaussianLimit::from_fn(first, last, |_| 0.0, |s, t| k * (s.min(t) - first) as f64)
        }
        SalesProcessSpec::Nhpp { .. } => {
            GaussianLimit::from_fn(first, last, |_| 0.0, |s, t| nu.nu(s.min(t) as f64) - base)
        }
        SalesProcessSpec::Cox { rho, sd, .. } => {
            let s2 = sd * sd;
            let ar = move |i: i64, j: i64| {
                let m = i.min(j);
                if m <= 0 {
                    return 0.0;
                }
                if rho == 0.0 {
                    return if i == j { s2 } else { 0.0 };
                }
                s2 * rho.powi((i - j).abs() as i32) * (1.0 - rho.powi(2 * m as i32)) / (1.0 - rho * rho)
            };
            GaussianLimit::from_fn(
                first,
                last,
                |_| 0.0,
                |s, t| nu.nu(s.min(t) as f64) - base + ar(s - first, t - first),
            )
        }
    }
}

/// Exact `f₁`, `f₂` of the synthetic claims law.
pub fn theoretical_moment_grids(
    claims: &ClaimsLawSpec,
    rebate: &RebateFunction<f64>,
    horizon: &TimeHorizon,
) -> Result<MomentGrids> {
    let (lo, hi) = horizon.sale_range();
    let mut f1 = Vec::new();
    let mut f2 = Vec::new();
    for x in lo..=hi {
        let (a, b, _) = claim_age_window(x as f64, horizon)?;
        let first = claims.integrate(|y| rebate.eval(y), a, b)?;
        let second = claims.integrate(|y| rebate.eval(y).powi(2), a, b)?;
        let var = match claims {
            ClaimsLawSpec::PoissonMeasure(_) => second,
            ClaimsLawSpec::SingleLifetime(_) => (second - first * first).max(0.0),
        };
        f1.push(first);
        f2.push(var);
    }
    Ok(MomentGrids {
        f1,
        f2,
        horizon: *horizon,
        rebate: rebate.clone(),
        floored: 0,
    })
}

/// `(c₁, c₂, μ̃, σ̃²)` implied by the synthetic laws.
pub fn theoretical_limit_params(cfg: &McConfig) -> Result<LimitParams> {
    limit_params_under(cfg, &cfg.rebate)
}

/// Limit parameters of the claim count, which ignores the rebate.
pub fn theoretical_count_params(cfg: &McConfig) -> Result<LimitParams> {
    limit_params_under(
        cfg,
        &RebateFunction::free_replacement(f64::from(cfg.horizon.warranty())),
    )
}

fn limit_params_under(cfg: &McConfig, rebate: &RebateFunction<f64>) -> Result<LimitParams> {
    let grids = theoretical_moment_grids(&cfg.claims, rebate, &cfg.horizon)?;
    let nu = cfg.sales.intensity(&cfg.horizon);
    let (c1, c2) = compute_c1_c2(&grids, &nu);
    let limit = theoretical_sales_limit(&cfg.sales, &cfg.horizon);
    let chi = chi_moments(&limit, &cfg.horizon)?;
    let weights = cfg.claims.daily_weights(|u| rebate.eval(u), cfg.horizon.warranty());
    let (mu, s2) = compute_mu_sigma_weighted(&chi, &weights)?;
    LimitParams::for_horizon(c1, c2, mu, s2, &cfg.horizon)
}

/// Limit law of the total cost for the configured policy and size law.
pub fn theoretical_cost_law(cfg: &McConfig, lp: &LimitParams) -> Result<CostApproximation> {
    if cfg.policy == Policy::ProRata {
        return cost_approx_prorata(lp, cfg.rebate.unit_price());
    }
    let n = lp.n as f64;
    match (&cfg.sizes, cfg.sizes.moments()) {
        (SizeLawSpec::Pareto { alpha, scale }, _) if *alpha < 2.0 => {
            let b = scale * n.powf(1.0 / alpha);
            if *alpha > 1.0 {
                cost_approx_stable_12(lp, alpha * scale / (alpha - 1.0), *alpha, b)
            } else if (*alpha - 1.0).abs() < crate::stable::ALPHA_ONE_GUARD {
                cost_approx_stable_01(lp, 1.0, n * scale, n.ln())
            } else {
                let e = scale * alpha / (1.0 - alpha) * (n.powf((1.0 - alpha) / alpha) - 1.0);
                cost_approx_stable_01(lp, *alpha, b, e)
            }
        }
        (_, (Some(e), Some(v))) => cost_approx_normal(lp, e, v),
        _ => Err(Error::domain(
            "size law has no finite variance and no stable limit configured",
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileError {
    pub p: f64,
    pub empirical: f64,
    pub theoretical: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub nominal: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub reps: usize,
    pub seed: u64,
    pub theory: LimitParams,
    pub mean_count: f64,
    pub mean_cost: f64,
    /// KS distance of the simulated claim count from its normal limit.
    pub ks_count: Option<f64>,
    /// KS distance of the simulated cost from its limit law.
    pub ks_cost: Option<f64>,
    pub quantile_errors: Vec<QuantileError>,
    pub coverage: Vec<Coverage>,
    /// No claims in any replication.
    pub degenerate: bool,
}

const CHECK_LEVELS: [f64; 7] = [0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];
const COVERAGE_LEVELS: [f64; 4] = [0.5, 0.8, 0.9, 0.95];

/// One replication of the full model.
pub fn simulate_once<R: Rng + ?Sized>(cfg: &McConfig, rng: &mut R) -> Result<Realization> {
    let sales = simulate_sales_with(&cfg.sales, &cfg.horizon, rng)?;
    let measures: Vec<ClaimsMeasure<f64>> = sales
        .iter()
        .map(|_| simulate_claims_measure_with(&cfg.claims, rng))
        .collect();
    let needed = match cfg.policy {
        Policy::FreeReplacement => qualifying_claims(&sales, &measures, &cfg.horizon, cfg.policy),
        Policy::ProRata => 0,
    };
    let sizes: Vec<f64> = (0..needed).map(|_| cfg.sizes.sample(rng)).collect();
    realize_cost(&sales, &measures, &sizes, &cfg.rebate, &cfg.horizon, cfg.policy)
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> Result<f64>>(sample: &[f64], cdf: F) -> Result<f64> {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let mut j = i;
        while j + 1 < xs.len() && xs[j + 1] == xs[i] {
            j += 1;
        }
        let f = cdf(xs[i])?;
        d = d.max((f - i as f64 / n).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    Ok(d)
}

/// Simulates `reps` independent replications and compares them with the limit laws.
pub fn monte_carlo_validate(cfg: &McConfig, reps: usize, seed: u64) -> Result<ValidationReport> {
    if reps < 100 {
        return Err(Error::domain(format!("need at least 100 replications, got {reps}")));
    }
    cfg.validate()?;
    let runs: Vec<Realization> = (0..reps)
        .into_par_iter()
        .map(|rep| simulate_once(cfg, &mut replication_rng(seed, rep as u64)))
        .collect::<Result<_>>()?;
    let theory = theoretical_limit_params(cfg)?;
    let counts: Vec<f64> = runs.iter().map(|r| r.count as f64).collect();
    let costs: Vec<f64> = runs.iter().map(|r| r.cost).collect();
    let mean_count = counts.iter().sum::<f64>() / reps as f64;
    let mean_cost = costs.iter().sum::<f64>() / reps as f64;
    let degenerate = runs.iter().all(|r| r.count == 0);
    let mut report = ValidationReport {
        reps,
        seed,
        theory,
        mean_count,
        mean_cost,
        ks_count: None,
        ks_cost: None,
        quantile_errors: Vec::new(),
        coverage: Vec::new(),
        degenerate,
    };
    if degenerate {
        log::warn!("no claims in any of {reps} replications; limit comparison skipped");
        return Ok(report);
    }
    let count_law = match cfg.policy {
        Policy::FreeReplacement => claims_count_approx(&theory)?,
        Policy::ProRata => claims_count_approx(&theoretical_count_params(cfg)?)?,
    };
    report.ks_count = Some(ks_distance(&counts, |x| count_law.cdf(x))?);
    let cost_law = theoretical_cost_law(cfg, &theory)?;
    report.ks_cost = Some(ks_distance(&costs, |x| cost_law.cdf(x))?);
    let mut sorted = costs.clone();
    sorted.sort_by(f64::total_cmp);
    for p in CHECK_LEVELS {
        let empirical = quantile_type7(&sorted, p);
        let theoretical = cost_law.quantile(p)?;
        report.quantile_errors.push(QuantileError {
            p,
            empirical,
            theoretical,
            relative_error: (empirical - theoretical).abs() / theoretical.abs(),
        });
    }
    for nominal in COVERAGE_LEVELS {
        let lo = cost_law.quantile((1.0 - nominal) / 2.0)?;
        let hi = cost_law.quantile((1.0 + nominal) / 2.0)?;
        let inside = costs.iter().filter(|c| (lo..=hi).contains(*c)).count();
        report.coverage.push(Coverage {
            nominal,
            observed: inside as f64 / reps as f64,
        });
    }
    Ok(report)
}
