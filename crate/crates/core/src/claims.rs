//! Per-item claim measures from raw records, the empirical and fitted mean
//! claims measure, and the moment grids f̂₁, f̂₂.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{claim_age_window, ClaimsMeasure, MeanClaimsMeasure, RebateFunction, TimeHorizon, WeightedMeasure};
use crate::tail::ols_line;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub vehicle_id: String,
    /// Day on the sales clock.
    pub claim_date: i64,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SalesRecord {
    pub vehicle_id: String,
    pub sale_date: i64,
}

/// Merges same-day claims of one vehicle into a single claim with the summed amount.
/// Output is ordered by `(vehicle_id, claim_date)`.
pub fn aggregate_daily_claims(claims: &[ClaimRecord]) -> Vec<ClaimRecord> {
    let mut days: BTreeMap<(&str, i64), f64> = BTreeMap::new();
    for c in claims {
        *days.entry((c.vehicle_id.as_str(), c.claim_date)).or_insert(0.0) += c.amount;
    }
    days.into_iter()
        .map(|((id, day), amount)| ClaimRecord {
            vehicle_id: id.to_string(),
            claim_date: day,
            amount,
        })
        .collect()
}

/// Claim measures keyed by vehicle plus the claims that referenced no sold vehicle.
#[derive(Debug, Clone, Default)]
pub struct ClaimsMeasures {
    pub measures: BTreeMap<String, ClaimsMeasure<f64>>,
    pub rejects: Vec<ClaimRecord>,
    /// Claims moved to age 0 because they predate the sale.
    pub clamped_low: usize,
    /// Claims moved to age W because they come after the warranty ended.
    pub clamped_high: usize,
}

impl ClaimsMeasures {
    pub fn total_claims(&self) -> usize {
        self.measures.values().map(|m| m.total_mass()).sum()
    }
}

/// One measure per sold vehicle; claim ages `claim_date - sale_date` are clamped into `[0, W]`.
pub fn build_claims_measures(
    sales: &[SalesRecord],
    claims: &[ClaimRecord],
    horizon: &TimeHorizon,
) -> Result<ClaimsMeasures> {
    let w = i64::from(horizon.warranty());
    let mut sale_of: BTreeMap<&str, i64> = BTreeMap::new();
    for s in sales {
        if sale_of.insert(s.vehicle_id.as_str(), s.sale_date).is_some() {
            return Err(Error::validation(format!(
                "vehicle '{}' sold more than once",
                s.vehicle_id
            )));
        }
    }
    let mut ages: BTreeMap<&str, Vec<f64>> = sale_of.keys().map(|k| (*k, Vec::new())).collect();
    let mut out = ClaimsMeasures::default();
    for c in claims {
        let Some(sale) = sale_of.get(c.vehicle_id.as_str()) else {
            out.rejects.push(c.clone());
            continue;
        };
        let raw = c.claim_date - sale;
        if raw < 0 {
            out.clamped_low += 1;
        } else if raw > w {
            out.clamped_high += 1;
        }
        ages.get_mut(c.vehicle_id.as_str())
            .expect("every sold vehicle has an entry")
            .push(raw.clamp(0, w) as f64);
    }
    if !out.rejects.is_empty() {
        log::warn!("{} claims reference unknown vehicles", out.rejects.len());
    }
    let wf = w as f64;
    for (id, a) in ages {
        out.measures.insert(id.to_string(), ClaimsMeasure::new(a, wf)?);
    }
    Ok(out)
}

/// Daily bins of `m̂₁`: bin 0 is the mass at `{0}`, bin `i` is `m̂₁((i-1, i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeanMeasure {
    pub bins: Vec<f64>,
    pub n: u64,
}

impl EmpiricalMeanMeasure {
    pub fn warranty(&self) -> usize {
        self.bins.len() - 1
    }
}

pub fn empirical_mean_measure<'a, I>(measures: I, n: u64, warranty: u32) -> Result<EmpiricalMeanMeasure>
where
    I: IntoIterator<Item = &'a ClaimsMeasure<f64>>,
{
    if n == 0 {
        return Err(Error::domain("empirical mean measure needs n ≥ 1 items"));
    }
    let w = warranty as usize;
    let mut counts = vec![0u64; w + 1];
    for m in measures {
        for &p in m.points() {
            let bin = (p.ceil() as usize).min(w);
            counts[bin] += 1;
        }
    }
    let nf = n as f64;
    Ok(EmpiricalMeanMeasure {
        bins: counts.into_iter().map(|c| c as f64 / nf).collect(),
        n,
    })
}

/// Linear fit of the interior bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMeasureFit {
    /// Fitted slope `â`.
    pub slope: f64,
    /// Fitted bin intercept `b̂ - â/2`.
    pub bin_intercept: f64,
}

/// Least squares of bins `1..W-1` on `i`: `m((i-1, i]) = a·i + b - a/2`. Atoms are the end bins.
pub fn fit_mean_measure(emp: &EmpiricalMeanMeasure) -> Result<(MeanClaimsMeasure<f64>, MeanMeasureFit)> {
    let w = emp.warranty();
    if w < 3 {
        return Err(Error::domain(format!(
            "mean-measure fit needs at least 2 interior bins, warranty is {w} days"
        )));
    }
    let pts: Vec<(f64, f64)> = (1..w).map(|i| (i as f64, emp.bins[i])).collect();
    let (slope, bin_intercept) = ols_line(&pts);
    let m = MeanClaimsMeasure::new(slope, bin_intercept + slope / 2.0, emp.bins[0], emp.bins[w], w as f64)?;
    Ok((m, MeanMeasureFit { slope, bin_intercept }))
}

/// Which measure supplies f̂₁.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstMomentSource {
    /// The fitted linear-plus-atoms measure.
    #[default]
    Fitted,
    /// The average of the raw item measures.
    Empirical,
}

/// f̂₁, f̂₂ on the integer sale days `x = -W + offset, ..., T + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentGrids {
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub horizon: TimeHorizon,
    pub rebate: RebateFunction<f64>,
    /// Grid points where the second-moment estimate went negative and was set to 0.
    pub floored: usize,
}

impl MomentGrids {
    /// First sale day on the grid.
    pub fn first_day(&self) -> i64 {
        self.horizon.sale_range().0
    }

    pub fn days(&self) -> impl Iterator<Item = i64> {
        let (lo, hi) = self.horizon.sale_range();
        lo..=hi
    }
}

/// `f̂₁(x) = m̃(window(x))` and `f̂₂(x) = (1/n)Σ_j (∫_window r dM_j)² - f̂₁(x)²`, floored at 0.
///
/// `measures` should hold every sold item; claim-free items only add to `n`.
pub fn estimate_moment_grids(
    measures: &[&ClaimsMeasure<f64>],
    n: u64,
    mhat: &MeanClaimsMeasure<f64>,
    rebate: &RebateFunction<f64>,
    horizon: &TimeHorizon,
    source: FirstMomentSource,
) -> Result<MomentGrids> {
    if n == 0 {
        return Err(Error::domain("moment grids need n ≥ 1 items"));
    }
    let nf = n as f64;
    let weighted = WeightedMeasure::new(mhat, rebate);
    let active: Vec<&ClaimsMeasure<f64>> = measures.iter().copied().filter(|m| !m.is_empty()).collect();
    let (lo, hi) = horizon.sale_range();
    let len = (hi - lo + 1) as usize;
    let mut f1 = Vec::with_capacity(len);
    let mut f2 = Vec::with_capacity(len);
    let mut floored = 0;
    for x in lo..=hi {
        let (a, b, _) = claim_age_window(x as f64, horizon)?;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for m in &active {
            let d = m.integrate(a, b, rebate);
            sum += d;
            sum_sq += d * d;
        }
        let first = match source {
            FirstMomentSource::Fitted => weighted.closed_mass(a, b)?,
            FirstMomentSource::Empirical => sum / nf,
        };
        let mut second = sum_sq / nf - first * first;
        if second < 0.0 {
            floored += 1;
            second = 0.0;
        }
        f1.push(first);
        f2.push(second);
    }
    if floored > 0 {
        log::warn!("second-moment estimate negative on {floored} of {len} sale days; floored at 0");
    }
    Ok(MomentGrids {
        f1,
        f2,
        horizon: *horizon,
        rebate: rebate.clone(),
        floored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn claim(id: &str, day: i64, amount: f64) -> ClaimRecord {
        ClaimRecord {
            vehicle_id: id.into(),
            claim_date: day,
            amount,
        }
    }

    fn sale(id: &str, day: i64) -> SalesRecord {
        SalesRecord {
            vehicle_id: id.into(),
            sale_date: day,
        }
    }

    fn car_horizon() -> TimeHorizon {
        TimeHorizon::new(1096, 91, 0, 10).unwrap()
    }

    #[test]
    fn same_day_claims_merge() {
        let got = aggregate_daily_claims(&[claim("V", 3, 10.0), claim("V", 3, 5.0), claim("V", 3, 2.0)]);
        assert_eq!(got, vec![claim("V", 3, 17.0)]);
        let two = [claim("V", 3, 10.0), claim("V", 4, 5.0)];
        assert_eq!(aggregate_daily_claims(&two), two.to_vec());
        assert!(aggregate_daily_claims(&[]).is_empty());
    }

    #[test]
    fn offsets_and_clamping() {
        let h = car_horizon();
        let sales = [sale("A", -1000), sale("B", -10), sale("C", -1100), sale("D", -5)];
        let claims = [
            claim("A", -995, 1.0),
            claim("A", -500, 1.0),
            claim("B", -20, 1.0),
            claim("C", 50, 1.0),
            claim("Z", 0, 1.0),
        ];
        let built = build_claims_measures(&sales, &claims, &h).unwrap();
        assert_eq!(built.measures["A"].points(), &[5.0, 500.0]);
        assert_eq!(built.measures["B"].points(), &[0.0]);
        assert_eq!(built.measures["C"].points(), &[1096.0]);
        assert!(built.measures["D"].is_empty());
        assert_eq!(built.rejects, vec![claim("Z", 0, 1.0)]);
        assert_eq!((built.clamped_low, built.clamped_high), (1, 1));
    }

    #[test]
    fn duplicate_sale_is_an_error() {
        let h = car_horizon();
        assert!(build_claims_measures(&[sale("A", 0), sale("A", 3)], &[], &h).is_err());
    }

    #[test]
    fn empirical_bins_by_hand() {
        let a = ClaimsMeasure::new(vec![1.0], 10.0).unwrap();
        let b = ClaimsMeasure::new(vec![1.0, 1.0], 10.0).unwrap();
        let e = empirical_mean_measure([&a, &b], 2, 10).unwrap();
        assert_eq!(e.bins.len(), 11);
        assert_eq!(e.bins[1], 1.5);
        assert_eq!(e.bins.iter().sum::<f64>(), 1.5);
        let none = empirical_mean_measure(std::iter::empty(), 5, 10).unwrap();
        assert!(none.bins.iter().all(|b| *b == 0.0));
        assert!(empirical_mean_measure(std::iter::empty(), 0, 10).is_err());
    }

    #[test]
    fn fractional_ages_use_half_open_bins() {
        let a = ClaimsMeasure::new(vec![0.0, 0.5, 1.0, 1.2], 4.0).unwrap();
        let e = empirical_mean_measure([&a], 1, 4).unwrap();
        assert_eq!(e.bins, vec![1.0, 2.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn flat_fit() {
        let mut bins = vec![0.25; 101];
        bins[0] = 0.0;
        bins[100] = 0.0;
        let (m, fit) = fit_mean_measure(&EmpiricalMeanMeasure { bins, n: 1 }).unwrap();
        assert_relative_eq!(fit.slope, 0.0, epsilon = 1e-15);
        assert_relative_eq!(m.intercept(), 0.25, epsilon = 1e-14);
        assert_eq!((m.atom_zero(), m.atom_warranty()), (0.0, 0.0));
    }

    #[test]
    fn noiseless_line_recovered() {
        let (a, b) = (-0.8872e-6, 0.1479e-2 - 0.8872e-6 / 2.0);
        let w = 1096;
        let mut bins: Vec<f64> = (0..=w).map(|i| a * i as f64 + b - a / 2.0).collect();
        bins[0] = 0.133;
        bins[w] = 0.042;
        let (m, _) = fit_mean_measure(&EmpiricalMeanMeasure { bins, n: 1 }).unwrap();
        assert!((m.slope() - a).abs() < 1e-12);
        assert!((m.intercept() - b).abs() < 1e-12);
        assert_eq!((m.atom_zero(), m.atom_warranty()), (0.133, 0.042));
    }

    #[test]
    fn negative_fit_reported() {
        let mut bins: Vec<f64> = (0..=100).map(|i| 0.5 - 0.01 * i as f64).collect();
        bins[100] = 0.0;
        let err = fit_mean_measure(&EmpiricalMeanMeasure { bins, n: 1 }).unwrap_err();
        assert!(err.to_string().contains("negative on"), "{err}");
    }

    #[test]
    fn two_item_toy_second_moment() {
        let h = TimeHorizon::new(1096, 91, 0, 2).unwrap();
        let a = ClaimsMeasure::new(vec![5.0], 1096.0).unwrap();
        let b = ClaimsMeasure::empty();
        let mhat = MeanClaimsMeasure::new(0.0, 0.0, 0.0, 0.0, 1096.0).unwrap();
        let r = RebateFunction::free_replacement(1096.0);
        let g = estimate_moment_grids(&[&a, &b], 2, &mhat, &r, &h, FirstMomentSource::Empirical).unwrap();
        let at = |x: i64| (x - g.first_day()) as usize;
        assert_eq!(g.f1[at(0)], 0.5);
        assert_eq!(g.f2[at(0)], 0.25);
        // sale at 87 sees ages [0, 4]: the claim at 5 falls outside
        assert_eq!(g.f2[at(87)], 0.0);
        assert_eq!(g.floored, 0);
    }

    #[test]
    fn empty_window_end_has_zero_first_moment() {
        let h = TimeHorizon::new(1096, 91, 0, 2).unwrap();
        let mhat = MeanClaimsMeasure::new(0.0, 1e-3, 0.0, 0.04, 1096.0).unwrap();
        let r = RebateFunction::free_replacement(1096.0);
        let g = estimate_moment_grids(&[], 2, &mhat, &r, &h, FirstMomentSource::Fitted).unwrap();
        assert_eq!(*g.f1.last().unwrap(), 0.0);
        assert_eq!(g.f1.len(), 1096 + 91 + 1);
        // earliest sale only sees the warranty-end atom
        assert_relative_eq!(g.f1[0], 0.04, epsilon = 1e-15);
    }

    #[test]
    fn fitted_source_counts_floors() {
        let h = TimeHorizon::new(20, 5, 0, 1).unwrap();
        let mhat = MeanClaimsMeasure::new(0.0, 0.5, 0.0, 0.0, 20.0).unwrap();
        let r = RebateFunction::free_replacement(20.0);
        let g = estimate_moment_grids(&[], 1, &mhat, &r, &h, FirstMomentSource::Fitted).unwrap();
        assert!(g.floored > 0);
        assert!(g.f2.iter().all(|v| *v == 0.0));
    }

    proptest! {
        #[test]
        fn claim_count_conserved(
            sale_days in prop::collection::vec(-200i64..20, 1..15),
            claim_specs in prop::collection::vec((0usize..20, -250i64..100), 0..40),
        ) {
            let h = TimeHorizon::new(100, 10, 0, 1).unwrap();
            let sales: Vec<SalesRecord> = sale_days.iter().enumerate()
                .map(|(i, d)| sale(&format!("v{i}"), *d)).collect();
            let claims: Vec<ClaimRecord> = claim_specs.iter()
                .map(|(i, d)| claim(&format!("v{i}"), *d, 1.0)).collect();
            let agg = aggregate_daily_claims(&claims);
            let built = build_claims_measures(&sales, &agg, &h).unwrap();
            let known = agg.iter().filter(|c| built.measures.contains_key(&c.vehicle_id)).count();
            prop_assert_eq!(built.total_claims(), known);
            prop_assert_eq!(built.total_claims() + built.rejects.len(), agg.len());
        }

        #[test]
        fn empirical_second_moment_dominates(
            ages in prop::collection::vec(prop::collection::vec(0u32..=60, 0..4), 1..12),
            residual in 0.0f64..=1.0,
        ) {
            let h = TimeHorizon::new(60, 10, 10, ages.len() as u64).unwrap();
            let ms: Vec<ClaimsMeasure<f64>> = ages.iter()
                .map(|a| ClaimsMeasure::new(a.iter().map(|x| *x as f64).collect(), 60.0).unwrap())
                .collect();
            let refs: Vec<&ClaimsMeasure<f64>> = ms.iter().collect();
            let mhat = MeanClaimsMeasure::new(0.0, 0.0, 0.0, 0.0, 60.0).unwrap();
            let r = RebateFunction::linear(60.0, residual, 1.0).unwrap();
            let g = estimate_moment_grids(&refs, ms.len() as u64, &mhat, &r, &h,
                FirstMomentSource::Empirical).unwrap();
            prop_assert_eq!(g.floored, 0);
            prop_assert!(g.f1.iter().all(|v| *v >= 0.0));
        }
    }
}
