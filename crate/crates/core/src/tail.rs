//! Claim-size diagnostics: summary statistics, the QQ estimator of the tail
//! index, regime selection and the Pareto plug-in scalers `b(n)`, `e(n)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the band around α = 1 treated as exactly 1.
pub const ALPHA_ONE_BAND: f64 = 0.05;

/// Which limit theorem version governs the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    FiniteVariance,
    #[serde(rename = "stable_1_2")]
    Stable12,
    #[serde(rename = "stable_0_1")]
    Stable01,
    #[serde(rename = "stable_eq_1")]
    StableEq1,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::FiniteVariance => "finite_variance",
            Regime::Stable12 => "stable_1_2",
            Regime::Stable01 => "stable_0_1",
            Regime::StableEq1 => "stable_eq_1",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite_variance" => Ok(Regime::FiniteVariance),
            "stable_1_2" => Ok(Regime::Stable12),
            "stable_0_1" => Ok(Regime::Stable01),
            "stable_eq_1" => Ok(Regime::StableEq1),
            other => Err(Error::Config(format!("unknown regime '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailDiagnosis {
    pub alpha_hat: f64,
    pub k: usize,
    pub regime: Regime,
    pub summary: SummaryStats,
}

fn sorted_finite(sizes: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = sizes.iter().find(|x| !x.is_finite()) {
        return Err(Error::domain(format!("non-finite claim size {bad}")));
    }
    let mut v = sizes.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Linear interpolation between order statistics (type 7) on sorted data.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summary_stats(sizes: &[f64]) -> Result<SummaryStats> {
    if sizes.len() < 2 {
        return Err(Error::domain(format!(
            "summary statistics need at least 2 sizes, got {}",
            sizes.len()
        )));
    }
    let v = sorted_finite(sizes)?;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let variance = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(SummaryStats {
        mean,
        variance,
        q25: quantile_type7(&v, 0.25),
        q50: quantile_type7(&v, 0.5),
        q75: quantile_type7(&v, 0.75),
    })
}

/// Points `(-ln(1 - i/(k+1)), ln X_(n-k+i))`, `i = 1..k`.
pub fn qq_plot_data(sizes: &[f64], k: usize) -> Result<Vec<(f64, f64)>> {
    if k < 2 || k > sizes.len() {
        return Err(Error::domain(format!(
            "QQ plot needs 2 ≤ k ≤ {} upper order statistics, got k = {k}",
            sizes.len()
        )));
    }
    let v = sorted_finite(sizes)?;
    let top = &v[v.len() - k..];
    if top[0] <= 0.0 {
        return Err(Error::domain(format!(
            "non-positive size {} among the top {k} order statistics",
            top[0]
        )));
    }
    let kp1 = (k + 1) as f64;
    Ok(top
        .iter()
        .enumerate()
        .map(|(i, x)| (-(1.0 - (i + 1) as f64 / kp1).ln(), x.ln()))
        .collect())
}

/// `(slope, intercept)` of the ordinary least-squares line through `points`.
pub fn ols_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// QQ estimator: reciprocal of the OLS slope of [`qq_plot_data`].
pub fn qq_estimator_alpha(sizes: &[f64], k: usize) -> Result<f64> {
    let pts = qq_plot_data(sizes, k)?;
    let (slope, _) = ols_line(&pts);
    if !(slope > 0.0) || !slope.is_finite() {
        return Err(Error::validation(format!(
            "QQ slope {slope} is not positive; sizes show no heavy tail"
        )));
    }
    Ok(1.0 / slope)
}

/// Regime rule: override or α ≥ 2 gives finite variance, `|α-1| < 0.05` the
/// α = 1 case, then `(1,2)` and `(0,1)`.
pub fn select_regime(alpha_hat: f64, finite_variance_override: bool) -> Result<Regime> {
    if !(alpha_hat > 0.0) {
        return Err(Error::domain(format!("tail index {alpha_hat} must be positive")));
    }
    if finite_variance_override {
        return Ok(Regime::FiniteVariance);
    }
    if alpha_hat >= 2.0 {
        log::warn!("tail index {alpha_hat:.3} ≥ 2: falling back to the finite-variance normal limit");
        return Ok(Regime::FiniteVariance);
    }
    if (alpha_hat - 1.0).abs() < ALPHA_ONE_BAND {
        return Ok(Regime::StableEq1);
    }
    Ok(if alpha_hat > 1.0 {
        Regime::Stable12
    } else {
        Regime::Stable01
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scalers {
    pub b: f64,
    pub e: Option<f64>,
}

/// Scaling `b(n)` and centring `e(n)` for the stable regimes.
///
/// In the `(1,2)` regime `b` is the empirical `1 - 1/n` quantile of `sizes`
/// when they are given, `n^{1/α}` otherwise.
pub fn scalers(alpha_hat: f64, n: u64, regime: Regime, sizes: Option<&[f64]>) -> Result<Scalers> {
    if n == 0 {
        return Err(Error::domain("scalers need n ≥ 1"));
    }
    if !(alpha_hat > 0.0) {
        return Err(Error::domain(format!("tail index {alpha_hat} must be positive")));
    }
    let nf = n as f64;
    match regime {
        Regime::FiniteVariance => Err(Error::domain("no stable scalers exist in the finite-variance regime")),
        Regime::Stable12 => {
            let b = match sizes {
                Some(s) if !s.is_empty() => {
                    let v = sorted_finite(s)?;
                    quantile_type7(&v, 1.0 - 1.0 / nf)
                }
                _ => nf.powf(1.0 / alpha_hat),
            };
            Ok(Scalers { b, e: None })
        }
        Regime::Stable01 => Ok(Scalers {
            b: nf.powf(1.0 / alpha_hat),
            e: Some(alpha_hat / (1.0 - alpha_hat) * (nf.powf((1.0 - alpha_hat) / alpha_hat) - 1.0)),
        }),
        Regime::StableEq1 => Ok(Scalers {
            b: nf,
            e: Some(nf.ln()),
        }),
    }
}

/// Summary statistics, QQ tail index and regime in one pass.
pub fn diagnose_tail(sizes: &[f64], k: usize, finite_variance_override: bool) -> Result<TailDiagnosis> {
    let summary = summary_stats(sizes)?;
    let alpha_hat = qq_estimator_alpha(sizes, k)?;
    let regime = select_regime(alpha_hat, finite_variance_override)?;
    Ok(TailDiagnosis {
        alpha_hat,
        k,
        regime,
        summary,
    })
}
