//! End-to-end estimation: claims, sales, tail, then the limit laws for each
//! forecast window.

use std::fmt::Write as _;

use serde::Serialize;

use crate::claims::{
    aggregate_daily_claims, build_claims_measures, empirical_mean_measure, estimate_moment_grids, fit_mean_measure,
    ClaimRecord, ClaimsMeasures, EmpiricalMeanMeasure, MeanMeasureFit, SalesRecord,
};
use crate::cost::{
    claims_count_approx, compute_c1_c2, compute_mu_sigma, cost_approx_normal, cost_approx_prorata,
    cost_approx_stable_01, cost_approx_stable_12, extremeness, quantile_table, CostApproximation, LimitParams,
    REPORT_LEVELS,
};
use crate::error::{Error, Result};
use crate::io::{iso_date, DateFormat, NPolicy, PlotData, RunConfig};
use crate::model::{MeanClaimsMeasure, RebateFunction, TimeHorizon};
use crate::sales::{
    chi_moments, compute_residuals, decompose_residuals, extrapolate_and_assemble, fit_bass, fit_bass_binned, BassFit,
    ResidualDecomposition,
};
use crate::tail::{
    diagnose_tail, qq_plot_data, scalers, select_regime, Regime, Scalers, TailDiagnosis, ALPHA_ONE_BAND,
};

/// Raw records as loaded, with the date format they were written in.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub sales: Vec<SalesRecord>,
    pub claims: Vec<ClaimRecord>,
    pub date_format: Option<DateFormat>,
}

/// Records on the forecasting clock: day 0 is the day after the last sale.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchored {
    pub sales: Vec<SalesRecord>,
    pub claims: Vec<ClaimRecord>,
    pub clock: Clock,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clock {
    /// Raw day number of day 0 in the input files.
    pub day_zero_raw: i64,
    /// Calendar date of day 0 when the inputs used ISO dates.
    pub day_zero_date: Option<String>,
    pub first_sale_day: i64,
    pub last_claim_day: Option<i64>,
}

pub fn anchor(inputs: &Inputs) -> Result<Anchored> {
    let last = inputs
        .sales
        .iter()
        .map(|s| s.sale_date)
        .max()
        .ok_or_else(|| Error::validation("no sales records"))?;
    let zero = last + 1;
    let sales: Vec<SalesRecord> = inputs
        .sales
        .iter()
        .map(|s| SalesRecord {
            vehicle_id: s.vehicle_id.clone(),
            sale_date: s.sale_date - zero,
        })
        .collect();
    let claims: Vec<ClaimRecord> = inputs
        .claims
        .iter()
        .map(|c| ClaimRecord {
            vehicle_id: c.vehicle_id.clone(),
            claim_date: c.claim_date - zero,
            amount: c.amount,
        })
        .collect();
    let clock = Clock {
        day_zero_raw: zero,
        day_zero_date: match inputs.date_format {
            Some(DateFormat::Iso) => iso_date(zero),
            _ => None,
        },
        first_sale_day: sales.iter().map(|s| s.sale_date).min().expect("non-empty"),
        last_claim_day: claims.iter().map(|c| c.claim_date).max(),
    };
    Ok(Anchored { sales, claims, clock })
}

/// Bass fit and residual decomposition of the daily sales counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SalesStage {
    pub first_day: i64,
    pub counts: Vec<f64>,
    pub n: u64,
    pub fit: BassFit,
    pub decomposition: ResidualDecomposition,
}

pub fn sales_stage(cfg: &RunConfig, sales: &[SalesRecord]) -> Result<SalesStage> {
    let first_day = sales
        .iter()
        .map(|s| s.sale_date)
        .min()
        .ok_or_else(|| Error::validation("no sales records"))?;
    let last_day = sales.iter().map(|s| s.sale_date).max().expect("non-empty");
    let mut counts = vec![0.0; (last_day - first_day + 1) as usize];
    for s in sales {
        counts[(s.sale_date - first_day) as usize] += 1.0;
    }
    let n = match cfg.n_policy {
        NPolicy::ObservedTotal => sales.len() as u64,
        NPolicy::Explicit(n) => n,
    };
    let fit = if cfg.bass_bin == 1 {
        fit_bass(&counts, first_day, n)?
    } else {
        fit_bass_binned(&counts, first_day, n, cfg.bass_bin)?
    };
    let r = compute_residuals(&counts, first_day, &fit.params);
    let decomposition = decompose_residuals(&r, first_day, cfg.ma_window, cfg.stationary, cfg.warranty as usize)?;
    Ok(SalesStage {
        first_day,
        counts,
        n,
        fit,
        decomposition,
    })
}

/// Claim measures, the empirical `m̂₁` and its linear-plus-atoms fit.
#[derive(Debug, Clone)]
pub struct ClaimsStage {
    pub measures: ClaimsMeasures,
    pub empirical: EmpiricalMeanMeasure,
    pub mhat: MeanClaimsMeasure<f64>,
    pub fit: MeanMeasureFit,
    /// Daily-aggregated claims used for estimation.
    pub claims: Vec<ClaimRecord>,
}

pub fn claims_stage(cfg: &RunConfig, sales: &[SalesRecord], claims: &[ClaimRecord]) -> Result<ClaimsStage> {
    let used: Vec<ClaimRecord> = claims
        .iter()
        .filter(|c| cfg.claims_cutoff.is_none_or(|cut| c.claim_date < cut))
        .cloned()
        .collect();
    let claims = aggregate_daily_claims(&used);
    let horizon = cfg.horizon(cfg.offsets()[0], sales.len().max(1) as u64)?;
    let measures = build_claims_measures(sales, &claims, &horizon)?;
    let empirical = empirical_mean_measure(measures.measures.values(), sales.len() as u64, cfg.warranty)?;
    let (mhat, fit) = fit_mean_measure(&empirical)?;
    Ok(ClaimsStage {
        measures,
        empirical,
        mhat,
        fit,
        claims,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailStage {
    pub diagnosis: TailDiagnosis,
    /// Regime after any configured override.
    pub regime: Regime,
    pub scalers: Option<Scalers>,
}

pub fn tail_stage(cfg: &RunConfig, sizes: &[f64], n: u64) -> Result<TailStage> {
    let diagnosis = diagnose_tail(sizes, cfg.qq_k, false)?;
    let alpha = diagnosis.alpha_hat;
    let regime = match cfg.regime_override {
        Some(Regime::FiniteVariance) => select_regime(alpha, true)?,
        Some(r) => {
            let fits = match r {
                Regime::Stable12 => alpha > 1.0 && alpha < 2.0,
                Regime::Stable01 => alpha > 0.0 && alpha < 1.0,
                _ => (alpha - 1.0).abs() < ALPHA_ONE_BAND,
            };
            if !fits {
                return Err(Error::validation(format!(
                    "regime override {} conflicts with the estimated tail index {alpha:.4}",
                    r.name()
                )));
            }
            r
        }
        None => select_regime(alpha, false)?,
    };
    let scalers = match regime {
        Regime::FiniteVariance => None,
        _ => Some(scalers(diagnosis.alpha_hat, n, regime, Some(sizes))?),
    };
    Ok(TailStage {
        diagnosis,
        regime,
        scalers,
    })
}

/// One named cost approximation and its quantiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub approximation: CostApproximation,
    pub quantiles: Vec<(f64, f64)>,
}

/// Position of an observed value under an approximate law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SanityValue {
    pub name: String,
    pub observed: f64,
    pub cdf: f64,
    pub extremeness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodReport {
    pub offset: u32,
    pub start: i64,
    pub end: i64,
    pub limit: LimitParams,
    pub count: CostApproximation,
    pub columns: Vec<Column>,
    /// Present when the claims data covers the whole window.
    pub sanity: Vec<SanityValue>,
    pub floored_second_moments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanMeasureSummary {
    pub slope: f64,
    pub intercept: f64,
    pub bin_intercept: f64,
    pub atom_zero: f64,
    pub atom_warranty: f64,
    pub total_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SalesSummary {
    pub n: u64,
    pub observed_sales: usize,
    pub innovation: f64,
    pub imitation: f64,
    pub origin: f64,
    pub iterations: usize,
    pub objective: f64,
    pub residual_mean: f64,
    pub residual_variance: f64,
    pub ma_window: usize,
    pub stationary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimsSummary {
    pub claims_used: usize,
    pub unknown_vehicle: usize,
    pub clamped_low: usize,
    pub clamped_high: usize,
    pub mean_measure: MeanMeasureSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub clock: Clock,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub provenance: Provenance,
    pub sales: SalesSummary,
    pub claims: ClaimsSummary,
    pub tail: Option<TailStage>,
    pub periods: Vec<PeriodReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub report: Report,
    pub plots: Vec<PlotData>,
}

/// Limit parameters of one forecast window.
pub fn period_limit(
    cfg: &RunConfig,
    sales: &SalesStage,
    claims: &ClaimsStage,
    rebate: &RebateFunction<f64>,
    horizon: &TimeHorizon,
) -> Result<(LimitParams, usize)> {
    let measures: Vec<_> = claims.measures.measures.values().collect();
    let items = measures.len() as u64;
    let grids = estimate_moment_grids(&measures, items, &claims.mhat, rebate, horizon, cfg.first_moment)?;
    let (c1, c2) = compute_c1_c2(&grids, &sales.fit.params);
    let limit = extrapolate_and_assemble(&sales.decomposition, cfg.poly_degree, horizon)?;
    let chi = chi_moments(&limit, horizon)?;
    let (mu, s2) = compute_mu_sigma(&chi, &claims.mhat, rebate)?;
    Ok((LimitParams::for_horizon(c1, c2, mu, s2, horizon)?, grids.floored))
}

/// Cost approximations for the policy and regime, normal first.
pub fn cost_columns(
    lp: &LimitParams,
    rebate: &RebateFunction<f64>,
    tail: Option<&TailStage>,
) -> Result<Vec<(String, CostApproximation)>> {
    if !rebate.is_free_replacement() {
        return Ok(vec![("pro_rata".into(), cost_approx_prorata(lp, rebate.unit_price())?)]);
    }
    let tail = tail.ok_or_else(|| Error::validation("free replacement needs claim sizes"))?;
    let s = &tail.diagnosis.summary;
    let mut out = vec![("normal".to_string(), cost_approx_normal(lp, s.mean, s.variance)?)];
    let alpha = tail.diagnosis.alpha_hat;
    match (tail.regime, tail.scalers) {
        (Regime::FiniteVariance, _) => {}
        (Regime::Stable12, Some(sc)) => out.push(("stable".into(), cost_approx_stable_12(lp, s.mean, alpha, sc.b)?)),
        (Regime::Stable01, Some(Scalers { b, e: Some(e) })) => {
            out.push(("stable".into(), cost_approx_stable_01(lp, alpha, b, e)?))
        }
        (Regime::StableEq1, Some(Scalers { b, e: Some(e) })) => {
            out.push(("stable".into(), cost_approx_stable_01(lp, 1.0, b, e)?))
        }
        (r, _) => return Err(Error::validation(format!("no scalers for regime {}", r.name()))),
    }
    Ok(out)
}

/// Observed claim count and cost in `[start, end]`, counting only claims within warranty.
/// Pro-rata counts each vehicle's first claim and pays `c_b r(age)`.
pub fn observed_in_window(
    sales: &[SalesRecord],
    claims: &[ClaimRecord],
    rebate: &RebateFunction<f64>,
    warranty: u32,
    start: i64,
    end: i64,
) -> (u64, f64) {
    let sold: std::collections::HashMap<&str, i64> =
        sales.iter().map(|s| (s.vehicle_id.as_str(), s.sale_date)).collect();
    let mut first: std::collections::HashMap<&str, i64> = std::collections::HashMap::new();
    if !rebate.is_free_replacement() {
        for c in claims {
            let e = first.entry(c.vehicle_id.as_str()).or_insert(c.claim_date);
            *e = (*e).min(c.claim_date);
        }
    }
    let (mut count, mut cost) = (0, 0.0);
    for c in claims {
        let Some(sale) = sold.get(c.vehicle_id.as_str()) else {
            continue;
        };
        let age = c.claim_date - sale;
        if !(0..=i64::from(warranty)).contains(&age) || !(start..=end).contains(&c.claim_date) {
            continue;
        }
        if rebate.is_free_replacement() {
            count += 1;
            cost += c.amount;
        } else if first[c.vehicle_id.as_str()] == c.claim_date {
            count += 1;
            cost += rebate.unit_price() * rebate.eval(age as f64);
        }
    }
    (count, cost)
}

fn sanity_value(name: &str, observed: f64, law: &CostApproximation) -> Result<SanityValue> {
    let cdf = law.cdf(observed)?;
    Ok(SanityValue {
        name: name.into(),
        observed,
        cdf,
        extremeness: extremeness(cdf)?,
    })
}

pub fn run_pipeline(cfg: &RunConfig, inputs: &Inputs) -> Result<PipelineOutput> {
    cfg.validate()?;
    let data = anchor(inputs)?;
    let rebate = cfg.rebate()?;
    let claims = claims_stage(cfg, &data.sales, &data.claims)?;
    let sales = sales_stage(cfg, &data.sales)?;
    let tail = if rebate.is_free_replacement() {
        let sizes: Vec<f64> = claims.claims.iter().map(|c| c.amount).collect();
        Some(tail_stage(cfg, &sizes, sales.n)?)
    } else {
        None
    };
    // realised values use every claim, including any past the estimation cutoff
    let all_claims = aggregate_daily_claims(&data.claims);

    let mut periods = Vec::new();
    let mut plots = Vec::new();
    for off in cfg.offsets() {
        let horizon = cfg.horizon(off, sales.n)?;
        let (lp, floored) = period_limit(cfg, &sales, &claims, &rebate, &horizon)?;
        let count = if rebate.is_free_replacement() {
            claims_count_approx(&lp)?
        } else {
            let free = RebateFunction::free_replacement(f64::from(cfg.warranty));
            claims_count_approx(&period_limit(cfg, &sales, &claims, &free, &horizon)?.0)?
        };
        let (start, end) = horizon.window();
        let mut columns = Vec::new();
        for (name, law) in cost_columns(&lp, &rebate, tail.as_ref())? {
            let quantiles = quantile_table(&law, &REPORT_LEVELS)?;
            plots.push(PlotData::new(
                &format!("cost_cdf_{start}_{end}_{name}"),
                "cost",
                "cdf",
                cdf_curve(&law)?,
            ));
            columns.push(Column {
                name,
                approximation: law,
                quantiles,
            });
        }
        let mut sanity = Vec::new();
        if data.clock.last_claim_day.is_some_and(|d| d >= end) {
            let (n_obs, cost_obs) = observed_in_window(&data.sales, &all_claims, &rebate, cfg.warranty, start, end);
            sanity.push(sanity_value("count", n_obs as f64, &count)?);
            for c in &columns {
                sanity.push(sanity_value(&c.name, cost_obs, &c.approximation)?);
            }
        }
        periods.push(PeriodReport {
            offset: off,
            start,
            end,
            limit: lp,
            count,
            columns,
            sanity,
            floored_second_moments: floored,
        });
    }

    plots.extend(stage_plots(&sales, &claims, tail.as_ref().map(|_| cfg.qq_k))?);
    let m = &claims.mhat;
    let report = Report {
        provenance: Provenance {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            clock: data.clock.clone(),
        },
        sales: SalesSummary {
            n: sales.n,
            observed_sales: data.sales.len(),
            innovation: sales.fit.params.innovation,
            imitation: sales.fit.params.imitation,
            origin: sales.fit.params.origin,
            iterations: sales.fit.iterations,
            objective: sales.fit.objective,
            residual_mean: sales.decomposition.l,
            residual_variance: sales.decomposition.s2,
            ma_window: sales.decomposition.window,
            stationary: sales.decomposition.stationary,
        },
        claims: ClaimsSummary {
            claims_used: claims.claims.len(),
            unknown_vehicle: claims.measures.rejects.len(),
            clamped_low: claims.measures.clamped_low,
            clamped_high: claims.measures.clamped_high,
            mean_measure: MeanMeasureSummary {
                slope: m.slope(),
                intercept: m.intercept(),
                bin_intercept: claims.fit.bin_intercept,
                atom_zero: m.atom_zero(),
                atom_warranty: m.atom_warranty(),
                total_mass: m.total_mass(),
            },
        },
        tail,
        periods,
    };
    Ok(PipelineOutput { report, plots })
}

/// CDF of `law` on 201 points between its 0.1% and 99.9% quantiles.
fn cdf_curve(law: &CostApproximation) -> Result<Vec<(f64, f64)>> {
    let lo = law.quantile(0.001)?;
    let hi = law.quantile(0.999)?;
    (0..=200)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / 200.0;
            Ok((x, law.cdf(x)?))
        })
        .collect()
}

/// Residuals, sales fit, `m̂` bins with the fitted line, QQ points and a size histogram.
pub fn stage_plots(sales: &SalesStage, claims: &ClaimsStage, qq_k: Option<usize>) -> Result<Vec<PlotData>> {
    let day = |i: usize| (sales.first_day + i as i64) as f64;
    let p = &sales.fit.params;
    let nf = sales.n as f64;
    let mut out = vec![
        PlotData::new(
            "residuals",
            "day",
            "residual",
            sales
                .decomposition
                .r
                .iter()
                .enumerate()
                .map(|(i, r)| (day(i), *r))
                .collect(),
        ),
        PlotData::new(
            "sales_counts",
            "day",
            "count",
            sales.counts.iter().enumerate().map(|(i, c)| (day(i), *c)).collect(),
        ),
        PlotData::new(
            "sales_fit",
            "day",
            "fitted",
            (0..sales.counts.len())
                .map(|i| (day(i), nf * (p.nu(day(i)) - p.nu(day(i) - 1.0))))
                .collect(),
        ),
        PlotData::new(
            "mhat_bins",
            "age",
            "mass",
            claims
                .empirical
                .bins
                .iter()
                .enumerate()
                .map(|(i, b)| (i as f64, *b))
                .collect(),
        ),
    ];
    let w = claims.empirical.warranty();
    out.push(PlotData::new(
        "mhat_fit",
        "age",
        "mass",
        (1..w)
            .map(|i| (i as f64, claims.fit.slope * i as f64 + claims.fit.bin_intercept))
            .collect(),
    ));
    if let Some(k) = qq_k {
        let sizes: Vec<f64> = claims.claims.iter().map(|c| c.amount).collect();
        out.push(PlotData::new(
            "qq_points",
            "exp_quantile",
            "log_size",
            qq_plot_data(&sizes, k)?,
        ));
        out.push(PlotData::new("size_density", "size", "density", histogram(&sizes, 100)));
    }
    Ok(out)
}

/// Equal-width histogram normalised to unit area; points are bin centres.
fn histogram(x: &[f64], bins: usize) -> Vec<(f64, f64)> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() || hi <= lo {
        return Vec::new();
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in x {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let norm = x.len() as f64 * width;
    counts
        .iter()
        .enumerate()
        .map(|(i, c)| (lo + (i as f64 + 0.5) * width, *c as f64 / norm))
        .collect()
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Human-readable summary with one quantile column per window and approximation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.provenance;
        let _ = writeln!(s, "Warranty cost forecast");
        let _ = writeln!(s, "  config sha256   {}", p.config_hash);
        let _ = writeln!(s, "  seed            {}", p.seed);
        let _ = write!(s, "  day 0           raw day {}", p.clock.day_zero_raw);
        if let Some(d) = &p.clock.day_zero_date {
            let _ = write!(s, " ({d})");
        }
        let _ = writeln!(s, "; first sale on day {}", p.clock.first_sale_day);

        let a = &self.sales;
        let _ = writeln!(s, "\nSales");
        let _ = writeln!(s, "  n               {} ({} observed)", a.n, a.observed_sales);
        let _ = writeln!(s, "  Bass B, C       {:.6e}, {:.6e}", a.innovation, a.imitation);
        let _ = writeln!(s, "  LM iterations   {} (objective {:.6e})", a.iterations, a.objective);
        let _ = writeln!(
            s,
            "  residual j      mean {:.6}, variance {:.6} (window {}, {})",
            a.residual_mean,
            a.residual_variance,
            a.ma_window,
            if a.stationary { "stationary" } else { "detrended" }
        );

        let c = &self.claims;
        let m = &c.mean_measure;
        let _ = writeln!(s, "\nClaims");
        let _ = writeln!(
            s,
            "  claims used     {} (unknown vehicle {}, clamped {} low / {} high)",
            c.claims_used, c.unknown_vehicle, c.clamped_low, c.clamped_high
        );
        let _ = writeln!(s, "  m density       {:.6e} y + {:.6e}", m.slope, m.intercept);
        let _ = writeln!(s, "  atoms at 0, W   {:.4}, {:.4}", m.atom_zero, m.atom_warranty);
        let _ = writeln!(s, "  total mass      {:.6}", m.total_mass);

        if let Some(t) = &self.tail {
            let d = &t.diagnosis;
            let _ = writeln!(s, "\nClaim sizes");
            let _ = writeln!(
                s,
                "  mean {:.4}, variance {:.4}, quartiles {:.4} / {:.4} / {:.4}",
                d.summary.mean, d.summary.variance, d.summary.q25, d.summary.q50, d.summary.q75
            );
            let _ = writeln!(
                s,
                "  alpha (QQ, k={})  {:.4}  regime {}",
                d.k,
                d.alpha_hat,
                t.regime.name()
            );
            if let Some(sc) = t.scalers {
                let _ = write!(s, "  b(n) {:.6e}", sc.b);
                if let Some(e) = sc.e {
                    let _ = write!(s, "  e(n) {e:.6e}");
                }
                let _ = writeln!(s);
            }
        }

        let _ = writeln!(s, "\nLimit parameters");
        let _ = writeln!(
            s,
            "  {:<14}{:>12}{:>12}{:>12}{:>12}",
            "window", "c1", "c2", "mu", "sigma2"
        );
        for per in &self.periods {
            let l = &per.limit;
            let _ = writeln!(
                s,
                "  {:<14}{:>12.4}{:>12.4}{:>12.4}{:>12.4}",
                format!("[{}, {}]", per.start, per.end),
                l.c1,
                l.c2,
                l.mu_tilde,
                l.sigma2_tilde
            );
        }

        let _ = writeln!(s, "\nCost quantiles");
        let mut header = format!("  {:<8}", "p");
        for per in &self.periods {
            for col in &per.columns {
                header.push_str(&format!("{:>22}", format!("[{},{}] {}", per.start, per.end, col.name)));
            }
        }
        let _ = writeln!(s, "{header}");
        for (i, p) in REPORT_LEVELS.iter().enumerate() {
            let mut row = format!("  {p:<8}");
            for per in &self.periods {
                for col in &per.columns {
                    row.push_str(&format!("{:>22.2}", col.quantiles[i].1));
                }
            }
            let _ = writeln!(s, "{row}");
        }

        if self.periods.iter().any(|p| !p.sanity.is_empty()) {
            let _ = writeln!(s, "\nObserved values");
            for per in &self.periods {
                for v in &per.sanity {
                    let _ = writeln!(
                        s,
                        "  [{}, {}] {:<10} observed {:>14.2}  cdf {:.4}  extremeness {:.4}",
                        per.start, per.end, v.name, v.observed, v.cdf, v.extremeness
                    );
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synthetic_records;

    const LOGNORMAL: &str = "{ kind = \"lognormal\", mu = 3.0, sigma = 0.5 }";

    fn config(extra: &str) -> RunConfig {
        config_with_sizes(extra, LOGNORMAL)
    }

    fn config_with_sizes(extra: &str, sizes: &str) -> RunConfig {
        RunConfig::from_toml_str(&format!(
            "warranty = 200\nperiod = 30\nqq_k = 200\nseed = 11\n{extra}\n[simulation]\nn = 3000\n\
             sales = {{ kind = \"nhpp\", intensity = {{ kind = \"bass\", innovation = 0.004, imitation = 0.02 }} }}\n\
             claims = {{ kind = \"poisson_measure\", slope = -1e-5, intercept = 4e-3, atom_zero = 0.1, atom_warranty = 0.05 }}\n\
             sizes = {sizes}\n"
        ))
        .unwrap()
    }

    fn inputs(cfg: &RunConfig) -> Inputs {
        let (sales, claims) = synthetic_records(&cfg.mc_config().unwrap(), 5).unwrap();
        // keep only the past: sales before day 0 of the simulation clock
        let sales: Vec<_> = sales.into_iter().filter(|s| s.sale_date < 0).collect();
        Inputs {
            sales,
            claims,
            date_format: Some(DateFormat::DayNumber),
        }
    }

    #[test]
    fn anchoring_puts_last_sale_on_day_minus_one() {
        let i = Inputs {
            sales: vec![
                SalesRecord {
                    vehicle_id: "a".into(),
                    sale_date: 100,
                },
                SalesRecord {
                    vehicle_id: "b".into(),
                    sale_date: 140,
                },
            ],
            claims: vec![],
            date_format: Some(DateFormat::Iso),
        };
        let a = anchor(&i).unwrap();
        assert_eq!(a.sales[1].sale_date, -1);
        assert_eq!(a.sales[0].sale_date, -41);
        assert_eq!(a.clock.day_zero_date.as_deref(), Some("1970-05-22"));
    }

    #[test]
    fn quantile_block_is_the_cost_engine_output() {
        let cfg = config("");
        let out = run_pipeline(&cfg, &inputs(&cfg)).unwrap();
        assert_eq!(out.report.periods.len(), 2);
        for per in &out.report.periods {
            assert_eq!(per.columns[0].name, "normal");
            for col in &per.columns {
                let direct = quantile_table(&col.approximation, &REPORT_LEVELS).unwrap();
                assert_eq!(col.quantiles, direct);
            }
            let normal = cost_columns(&per.limit, &cfg.rebate().unwrap(), out.report.tail.as_ref()).unwrap();
            assert_eq!(normal[0].1, per.columns[0].approximation);
        }
    }

    #[test]
    fn finite_variance_gives_normal_column_only() {
        let cfg = config("regime_override = \"finite_variance\"");
        let out = run_pipeline(&cfg, &inputs(&cfg)).unwrap();
        for per in &out.report.periods {
            assert_eq!(per.columns.len(), 1);
        }
    }

    #[test]
    fn stable_regime_adds_a_column() {
        let cfg = config_with_sizes("", "{ kind = \"pareto\", alpha = 1.5, scale = 10.0 }");
        let out = run_pipeline(&cfg, &inputs(&cfg)).unwrap();
        assert_eq!(out.report.tail.as_ref().unwrap().regime, Regime::Stable12);
        let names: Vec<_> = out.report.periods[0].columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["normal", "stable"]);
        assert!(out.report.to_text().contains("stable"));
    }

    #[test]
    fn override_must_agree_with_the_estimate() {
        let cfg = config("regime_override = \"stable_1_2\"");
        assert!(matches!(run_pipeline(&cfg, &inputs(&cfg)), Err(Error::Validation(_))));
    }

    #[test]
    fn pipeline_is_deterministic() {
        let cfg = config("");
        let i = inputs(&cfg);
        let a = run_pipeline(&cfg, &i).unwrap();
        let b = run_pipeline(&cfg, &i).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        assert_eq!(a.report.to_text(), b.report.to_text());
        assert_eq!(a.plots, b.plots);
    }

    #[test]
    fn plot_files_round_trip() {
        let cfg = config("");
        let out = run_pipeline(&cfg, &inputs(&cfg)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for p in &out.plots {
            let path = p.write_to(dir.path()).unwrap();
            assert_eq!(&PlotData::read_from(&path).unwrap(), p);
        }
    }

    #[test]
    fn prorata_window_counts_first_claims() {
        let sales = vec![SalesRecord {
            vehicle_id: "a".into(),
            sale_date: -10,
        }];
        let c = |d| ClaimRecord {
            vehicle_id: "a".into(),
            claim_date: d,
            amount: 1.0,
        };
        let claims = vec![c(5), c(8)];
        let r = RebateFunction::linear(100.0, 0.0, 50.0).unwrap();
        let (n, cost) = observed_in_window(&sales, &claims, &r, 100, 0, 30);
        assert_eq!(n, 1);
        assert!((cost - 50.0 * 0.85).abs() < 1e-12);
        let free = RebateFunction::free_replacement(100.0);
        assert_eq!(observed_in_window(&sales, &claims, &free, 100, 0, 30), (2, 2.0));
    }
}
