//! Sales intensity: the Bass curve fit, residual decomposition and the
//! Gaussian fluctuation limit `(θ̂, γ̂)` with its window functional χ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TimeHorizon;

/// Lower bound on the smoothed scale before it is used as a divisor.
pub const SCALE_FLOOR: f64 = 1e-8;

const LM_MAX_ITER: usize = 200;
const LM_REL_TOL: f64 = 1e-10;
const LM_START: (f64, f64) = (1e-4, 1e-2);

/// Bass adoption curve `ν(t) = (1 - e^{-Cτ}) / (1 + (C/B - 1) e^{-Cτ})`, `τ = t - origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BassParams {
    /// Innovation coefficient `B` (per day).
    pub innovation: f64,
    /// Imitation coefficient `C` (per day).
    pub imitation: f64,
    /// Total sales `n` the curve is scaled by.
    pub n: u64,
    /// Day at which `ν = 0`.
    pub origin: f64,
}

impl BassParams {
    pub fn new(innovation: f64, imitation: f64, n: u64, origin: f64) -> Result<Self> {
        if !(innovation > 0.0 && imitation > 0.0) || !innovation.is_finite() || !imitation.is_finite() {
            return Err(Error::domain(format!(
                "Bass coefficients must be positive, got B = {innovation}, C = {imitation}"
            )));
        }
        Ok(BassParams {
            innovation,
            imitation,
            n,
            origin,
        })
    }

    fn parts(&self, t: f64) -> (f64, f64) {
        let tau = (t - self.origin).max(0.0);
        let e = (-self.imitation * tau).exp();
        (e, self.imitation / self.innovation - 1.0)
    }

    /// `ν(t)`, zero before the origin.
    pub fn nu(&self, t: f64) -> f64 {
        let (e, k) = self.parts(t);
        (1.0 - e) / (1.0 + k * e)
    }

    /// `ν'(t) = C(1+k)E / (1+kE)²`.
    pub fn density(&self, t: f64) -> f64 {
        if t < self.origin {
            return 0.0;
        }
        let (e, k) = self.parts(t);
        self.imitation * (1.0 + k) * e / (1.0 + k * e).powi(2)
    }
}

/// A deterministic cumulative sales intensity `ν` with a closed-form inverse.
pub trait CumulativeIntensity: Send + Sync {
    fn nu(&self, t: f64) -> f64;

    /// Smallest `t` with `ν(t) ≥ y`; `+∞` when `ν` never reaches `y`.
    fn inverse(&self, y: f64) -> f64;
}

impl CumulativeIntensity for BassParams {
    fn nu(&self, t: f64) -> f64 {
        BassParams::nu(self, t)
    }

    fn inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return self.origin;
        }
        if y >= 1.0 {
            return f64::INFINITY;
        }
        let k = self.imitation / self.innovation - 1.0;
        let e = (1.0 - y) / (1.0 + k * y);
        self.origin - e.ln() / self.imitation
    }
}

/// `ν(t) = rate·(t - origin)` for `t ≥ origin`, zero before.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearIntensity {
    pub origin: f64,
    pub rate: f64,
}

impl LinearIntensity {
    /// Uniform sales over `[start, end]`: `ν(start) = 0`, `ν(end) = 1`.
    pub fn uniform(start: f64, end: f64) -> Result<Self> {
        if !(end > start) {
            return Err(Error::domain(format!("empty sales interval [{start}, {end}]")));
        }
        Ok(LinearIntensity {
            origin: start,
            rate: 1.0 / (end - start),
        })
    }
}

impl CumulativeIntensity for LinearIntensity {
    fn nu(&self, t: f64) -> f64 {
        self.rate * (t - self.origin).max(0.0)
    }

    fn inverse(&self, y: f64) -> f64 {
        self.origin + y.max(0.0) / self.rate
    }
}

pub fn bass_nu(params: &BassParams, t: f64) -> f64 {
    params.nu(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BassFit {
    pub params: BassParams,
    pub iterations: usize,
    /// Final sum of squared residuals.
    pub objective: f64,
}

/// Least-squares fit of `n·ν'(t)` to daily sale counts.
///
/// `counts[i]` is the number of sales on day `first_day + i`; the curve's
/// origin is the day before the first observation.
pub fn fit_bass(counts: &[f64], first_day: i64, n: u64) -> Result<BassFit> {
    check_counts(counts, 30)?;
    let origin = first_day as f64 - 1.0;
    let nf = n as f64;
    let days: Vec<f64> = (0..counts.len()).map(|i| (first_day + i as i64) as f64).collect();
    let model = |p: &BassParams, out: &mut Vec<f64>| {
        out.clear();
        out.extend(days.iter().map(|t| nf * p.density(*t)));
    };
    levenberg_marquardt(counts, n, origin, model)
}

/// Same fit with the objective summed over consecutive bins of `bin` days:
/// each bin's count is matched to `n(ν(end) - ν(start))`. A trailing partial bin is dropped.
pub fn fit_bass_binned(counts: &[f64], first_day: i64, n: u64, bin: usize) -> Result<BassFit> {
    if bin == 0 {
        return Err(Error::domain("bin width must be positive"));
    }
    check_counts(counts, 30)?;
    let origin = first_day as f64 - 1.0;
    let nf = n as f64;
    let bins: Vec<f64> = counts.chunks_exact(bin).map(|c| c.iter().sum()).collect();
    if bins.len() < 2 {
        return Err(Error::domain("binned Bass fit needs at least two full bins"));
    }
    let edges: Vec<f64> = (0..=bins.len()).map(|j| origin + (j * bin) as f64).collect();
    let model = |p: &BassParams, out: &mut Vec<f64>| {
        out.clear();
        out.extend(edges.windows(2).map(|w| nf * (p.nu(w[1]) - p.nu(w[0]))));
    };
    levenberg_marquardt(&bins, n, origin, model)
}

fn check_counts(counts: &[f64], min_days: usize) -> Result<()> {
    if counts.len() < min_days {
        return Err(Error::domain(format!(
            "Bass fit needs at least {min_days} observed days, got {}",
            counts.len()
        )));
    }
    if let Some(c) = counts.iter().find(|c| !(**c >= 0.0) || !c.is_finite()) {
        return Err(Error::domain(format!(
            "daily sale count {c} is not a non-negative number"
        )));
    }
    Ok(())
}

/// Damped Gauss–Newton on `(ln B, ln C)` with a central-difference Jacobian.
fn levenberg_marquardt<M>(target: &[f64], n: u64, origin: f64, model: M) -> Result<BassFit>
where
    M: Fn(&BassParams, &mut Vec<f64>),
{
    let params_at = |p: [f64; 2]| BassParams {
        innovation: p[0].exp(),
        imitation: p[1].exp(),
        n,
        origin,
    };
    let mut buf = Vec::with_capacity(target.len());
    let objective_at = |p: [f64; 2], buf: &mut Vec<f64>| {
        model(&params_at(p), buf);
        buf.iter().zip(target).map(|(m, y)| (m - y).powi(2)).sum::<f64>()
    };

    let mut p = [LM_START.0.ln(), LM_START.1.ln()];
    let mut f = objective_at(p, &mut buf);
    let mut lambda = 1e-3;
    let h = 1e-6;
    let (mut plus, mut minus) = (Vec::new(), Vec::new());
    for iter in 1..=LM_MAX_ITER {
        model(&params_at(p), &mut buf);
        let resid: Vec<f64> = buf.iter().zip(target).map(|(m, y)| m - y).collect();
        let mut jac = [vec![0.0; target.len()], vec![0.0; target.len()]];
        for (k, col) in jac.iter_mut().enumerate() {
            let mut up = p;
            let mut down = p;
            up[k] += h;
            down[k] -= h;
            model(&params_at(up), &mut plus);
            model(&params_at(down), &mut minus);
            for i in 0..target.len() {
                col[i] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (h00, h01, h11) = (dot(&jac[0], &jac[0]), dot(&jac[0], &jac[1]), dot(&jac[1], &jac[1]));
        let (g0, g1) = (dot(&jac[0], &resid), dot(&jac[1], &resid));

        loop {
            let (a00, a11) = (h00 * (1.0 + lambda), h11 * (1.0 + lambda));
            let det = a00 * a11 - h01 * h01;
            let step = if det.abs() > 0.0 && det.is_finite() {
                [-(a11 * g0 - h01 * g1) / det, -(a00 * g1 - h01 * g0) / det]
            } else {
                [f64::NAN, f64::NAN]
            };
            let trial = [p[0] + step[0], p[1] + step[1]];
            let ft = if trial.iter().all(|v| v.is_finite()) {
                objective_at(trial, &mut buf)
            } else {
                f64::INFINITY
            };
            if ft.is_finite() && ft <= f {
                let rel = (f - ft) / f.max(f64::MIN_POSITIVE);
                p = trial;
                f = ft;
                lambda = (lambda / 10.0).max(1e-12);
                if rel < LM_REL_TOL || f == 0.0 {
                    return Ok(BassFit {
                        params: params_at(p),
                        iterations: iter,
                        objective: f,
                    });
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no descent direction left at working precision
                return Ok(BassFit {
                    params: params_at(p),
                    iterations: iter,
                    objective: f,
                });
            }
        }
    }
    let best = params_at(p);
    Err(Error::NonConvergence {
        iterations: LM_MAX_ITER,
        best_innovation: best.innovation,
        best_imitation: best.imitation,
        residual_norm: f.sqrt(),
    })
}

/// `r_t = n^{-1/2} (count_t - n(ν̂(t) - ν̂(t-1)))` for each observed day.
pub fn compute_residuals(counts: &[f64], first_day: i64, params: &BassParams) -> Vec<f64> {
    let nf = params.n as f64;
    let root = nf.sqrt();
    counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let t = (first_day + i as i64) as f64;
            (c - nf * (params.nu(t) - params.nu(t - 1.0))) / root
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualDecomposition {
    /// Day of `r[0]`.
    pub first_day: i64,
    pub r: Vec<f64>,
    pub trend: Vec<f64>,
    pub scale: Vec<f64>,
    pub j: Vec<f64>,
    /// Smoothing half-width.
    pub window: usize,
    pub l: f64,
    pub s2: f64,
    /// `c(h)`, `h = 0..=max_lag`.
    pub acf: Vec<f64>,
    pub stationary: bool,
}

/// Centred moving average with half-width `h`, truncated at the ends.
pub fn moving_average(x: &[f64], h: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Biased sample autocorrelation for lags `0..=max_lag` (zero past the series length).
pub fn sample_acf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let denom: f64 = d.iter().map(|v| v * v).sum();
    let mut acf = vec![0.0; max_lag + 1];
    acf[0] = 1.0;
    if denom <= 0.0 {
        return acf;
    }
    for (h, slot) in acf.iter_mut().enumerate().skip(1).take(n.saturating_sub(1)) {
        *slot = d[..n - h].iter().zip(&d[h..]).map(|(a, b)| a * b).sum::<f64>() / denom;
    }
    acf
}

/// Splits residuals into trend `TR`, scale `SC` and surrogates `j = (r - TR)/SC`.
///
/// With `stationary` set, `TR ≡ 0` and `SC ≡ 1`.
pub fn decompose_residuals(
    r: &[f64],
    first_day: i64,
    window: usize,
    stationary: bool,
    max_lag: usize,
) -> Result<ResidualDecomposition> {
    if window == 0 {
        return Err(Error::domain("smoothing window must be at least 1 day"));
    }
    if r.len() <= 2 * window {
        return Err(Error::domain(format!(
            "residual series of {} days is too short for half-width {window}",
            r.len()
        )));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("residual series contains non-finite values"));
    }
    let (trend, scale) = if stationary {
        (vec![0.0; r.len()], vec![1.0; r.len()])
    } else {
        let trend = moving_average(r, window);
        let abs_dev: Vec<f64> = r.iter().zip(&trend).map(|(a, b)| (a - b).abs()).collect();
        let scale = moving_average(&abs_dev, window)
            .into_iter()
            .map(|s| s.max(SCALE_FLOOR))
            .collect();
        (trend, scale)
    };
    let j: Vec<f64> = r
        .iter()
        .zip(&trend)
        .zip(&scale)
        .map(|((r, t), s)| (r - t) / s)
        .collect();
    let len = j.len() as f64;
    let l = j.iter().sum::<f64>() / len;
    let s2 = j.iter().map(|v| (v - l).powi(2)).sum::<f64>() / (len - 1.0);
    let acf = sample_acf(&j, max_lag);
    Ok(ResidualDecomposition {
        first_day,
        r: r.to_vec(),
        trend,
        scale,
        j,
        window,
        l,
        s2,
        acf,
        stationary,
    })
}

/// Least-squares polynomial in a rescaled variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
    pub center: f64,
    pub half_range: f64,
}

impl Polynomial {
    pub fn fit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Self> {
        if xs.len() <= degree {
            return Err(Error::numerical(format!(
                "cannot fit a degree-{degree} polynomial to {} points",
                xs.len()
            )));
        }
        let (lo, hi) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        let center = 0.5 * (lo + hi);
        let half_range = (0.5 * (hi - lo)).max(1.0);
        let a = DMatrix::from_fn(xs.len(), degree + 1, |i, k| {
            ((xs[i] - center) / half_range).powi(k as i32)
        });
        let b = DVector::from_column_slice(ys);
        let svd = a.svd(true, true);
        let (smax, smin) = svd
            .singular_values
            .iter()
            .fold((0.0f64, f64::INFINITY), |(a, b), s| (a.max(*s), b.min(*s)));
        if !(smin > 1e-12 * smax) {
            return Err(Error::numerical(format!(
                "polynomial fit of degree {degree} is rank deficient"
            )));
        }
        let c = svd
            .solve(&b, 0.0)
            .map_err(|e| Error::numerical(format!("polynomial least squares failed: {e}")))?;
        Ok(Polynomial {
            coeffs: c.iter().copied().collect(),
            center,
            half_range,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.half_range;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }
}

/// Mean `θ̂` and covariance `γ̂` of the fluctuation limit on the days
/// `first_day..=last_day`, with `θ̂(first_day) = 0` and `γ̂(first_day, ·) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLimit {
    pub first_day: i64,
    pub theta: Vec<f64>,
    /// Row-major, `len × len`.
    pub gamma: Vec<f64>,
    /// Increment means `TR_t + l·SC_t` for days `first_day+1..=last_day`.
    pub increment_mean: Vec<f64>,
    /// Scales `SC_t` for the same days.
    pub increment_scale: Vec<f64>,
}

impl GaussianLimit {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn last_day(&self) -> i64 {
        self.first_day + self.theta.len() as i64 - 1
    }

    fn index(&self, t: i64) -> Result<usize> {
        if t < self.first_day || t > self.last_day() {
            return Err(Error::domain(format!(
                "day {t} outside the limit grid [{}, {}]",
                self.first_day,
                self.last_day()
            )));
        }
        Ok((t - self.first_day) as usize)
    }

    pub fn theta_at(&self, t: i64) -> Result<f64> {
        Ok(self.theta[self.index(t)?])
    }

    pub fn gamma_at(&self, s: i64, t: i64) -> Result<f64> {
        let (i, j) = (self.index(s)?, self.index(t)?);
        Ok(self.gamma[i * self.len() + j])
    }

    /// Tabulates a known mean and covariance function on `first_day..=last_day`.
    pub fn from_fn<M, C>(first_day: i64, last_day: i64, theta: M, gamma: C) -> Self
    where
        M: Fn(i64) -> f64,
        C: Fn(i64, i64) -> f64,
    {
        let size = (last_day - first_day + 1) as usize;
        let theta: Vec<f64> = (first_day..=last_day).map(&theta).collect();
        let mut g = vec![0.0; size * size];
        for i in 0..size {
            for j in i..size {
                let v = gamma(first_day + i as i64, first_day + j as i64);
                g[i * size + j] = v;
                g[j * size + i] = v;
            }
        }
        GaussianLimit {
            first_day,
            increment_mean: theta.windows(2).map(|w| w[1] - w[0]).collect(),
            increment_scale: Vec::new(),
            theta,
            gamma: g,
        }
    }

    /// Builds the limit from per-day increment means and scales with a common
    /// stationary correlation `s²c(h)` (zero beyond the last lag supplied).
    pub fn from_increments(first_day: i64, mean: &[f64], scale: &[f64], s2: f64, acf: &[f64]) -> Self {
        let m = mean.len();
        let size = m + 1;
        let mut theta = vec![0.0; size];
        for (i, mu) in mean.iter().enumerate() {
            theta[i + 1] = theta[i] + mu;
        }
        // row prefix sums of the increment covariance, then column prefix sums
        let mut gamma = vec![0.0; size * size];
        for u in 0..m {
            let mut run = 0.0;
            for v in 0..m {
                let lag = u.abs_diff(v);
                let c = acf.get(lag).copied().unwrap_or(0.0);
                run += scale[u] * scale[v] * s2 * c;
                gamma[(u + 1) * size + v + 1] = gamma[u * size + v + 1] + run;
            }
        }
        // the two summation orders differ in rounding; keep the matrix exactly symmetric
        for i in 0..size {
            for j in 0..i {
                gamma[i * size + j] = gamma[j * size + i];
            }
        }
        GaussianLimit {
            first_day,
            theta,
            gamma,
            increment_mean: mean.to_vec(),
            increment_scale: scale.to_vec(),
        }
    }
}

/// Extends `TR` and `ln SC` by polynomial fits to the days the observations
/// miss, then cumulates into `(θ̂, γ̂)` on `[offset - W, offset + T]`.
pub fn extrapolate_and_assemble(
    dec: &ResidualDecomposition,
    poly_degree: usize,
    horizon: &TimeHorizon,
) -> Result<GaussianLimit> {
    let start = -i64::from(horizon.warranty());
    let (_, end) = horizon.window();
    let observed: Vec<f64> = (0..dec.r.len()).map(|i| (dec.first_day + i as i64) as f64).collect();
    let trend_poly = Polynomial::fit(&observed, &dec.trend, poly_degree)?;
    let log_scale: Vec<f64> = dec.scale.iter().map(|s| s.ln()).collect();
    let scale_poly = Polynomial::fit(&observed, &log_scale, poly_degree)?;
    let last_obs = dec.first_day + dec.r.len() as i64 - 1;

    let days = (start + 1)..=end;
    let mut mean = Vec::with_capacity((end - start) as usize);
    let mut scale = Vec::with_capacity((end - start) as usize);
    for t in days {
        let (tr, sc) = if t >= dec.first_day && t <= last_obs {
            let i = (t - dec.first_day) as usize;
            (dec.trend[i], dec.scale[i])
        } else {
            (trend_poly.eval(t as f64), scale_poly.eval(t as f64).exp())
        };
        mean.push(tr + dec.l * sc);
        scale.push(sc);
    }
    // lags beyond W carry no correlation
    let max_lag = (horizon.warranty() as usize).min(dec.acf.len().saturating_sub(1));
    Ok(GaussianLimit::from_increments(
        start,
        &mean,
        &scale,
        dec.s2,
        &dec.acf[..=max_lag],
    ))
}

/// Mean and covariance of `χ(N^∞)(u) = N^∞(o+T-u) - N^∞(o-u)` for ages `u = 0..=W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiMoments {
    pub mean: Vec<f64>,
    /// Row-major `(W+1) × (W+1)`.
    pub cov: Vec<f64>,
}

impl ChiMoments {
    pub fn size(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_at(&self, u: usize, v: usize) -> Result<f64> {
        let n = self.size();
        if u >= n || v >= n {
            return Err(Error::domain(format!("age ({u}, {v}) outside [0, {}]", n - 1)));
        }
        Ok(self.cov[u * n + v])
    }
}

pub fn chi_moments(limit: &GaussianLimit, horizon: &TimeHorizon) -> Result<ChiMoments> {
    let w = i64::from(horizon.warranty());
    let (o, e) = horizon.window();
    let size = (w + 1) as usize;
    let mut mean = Vec::with_capacity(size);
    for u in 0..=w {
        mean.push(limit.theta_at(e - u)? - limit.theta_at(o - u)?);
    }
    let mut cov = vec![0.0; size * size];
    for u in 0..=w {
        for v in u..=w {
            let c = limit.gamma_at(e - u, e - v)? + limit.gamma_at(o - u, o - v)?
                - limit.gamma_at(e - u, o - v)?
                - limit.gamma_at(e - v, o - u)?;
            let (iu, iv) = (u as usize, v as usize);
            cov[iu * size + iv] = c;
            cov[iv * size + iu] = c;
        }
    }
    Ok(ChiMoments { mean, cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noiseless_counts(p: &BassParams, first_day: i64, days: usize) -> Vec<f64> {
        (0..days)
            .map(|i| p.n as f64 * p.density((first_day + i as i64) as f64))
            .collect()
    }

    #[test]
    fn nu_limits_and_origin() {
        let p = BassParams::new(4e-4, 1.6e-2, 100, -1096.0).unwrap();
        assert_eq!(p.nu(-1096.0), 0.0);
        assert_eq!(p.nu(-2000.0), 0.0);
        assert_relative_eq!(p.nu(1e6), 1.0, epsilon = 1e-15);
        assert!(BassParams::new(0.0, 1.0, 1, 0.0).is_err());
    }

    #[test]
    fn density_is_derivative_of_nu() {
        let p = BassParams::new(4.0149e-4, 1.6738e-2, 1, -1116.0).unwrap();
        for t in [-1000.0, -500.0, 0.0, 91.0] {
            let fd = (p.nu(t + 1e-4) - p.nu(t - 1e-4)) / 2e-4;
            assert_relative_eq!(p.density(t), fd, epsilon = 1e-11, max_relative = 1e-7);
        }
    }

    #[test]
    fn intensity_inverses() {
        let p = BassParams::new(4e-4, 1.6e-2, 1, -1117.0).unwrap();
        for y in [0.01, 0.3, 0.9, 0.999] {
            let t = CumulativeIntensity::inverse(&p, y);
            assert_relative_eq!(p.nu(t), y, max_relative = 1e-12);
        }
        assert_eq!(CumulativeIntensity::inverse(&p, 1.0), f64::INFINITY);
        let l = LinearIntensity::uniform(-100.0, 20.0).unwrap();
        assert_eq!(l.nu(20.0), 1.0);
        assert_eq!(l.inverse(0.5), -40.0);
    }

    #[test]
    fn recovers_noiseless_bass() {
        let truth = BassParams::new(4.0149e-4, 1.6738e-2, 34807, -1117.0).unwrap();
        let counts = noiseless_counts(&truth, -1116, 1116);
        let fit = fit_bass(&counts, -1116, 34807).unwrap();
        assert!((fit.params.innovation / truth.innovation - 1.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.params.imitation / truth.imitation - 1.0).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn binned_fit_recovers_noiseless_bass() {
        let truth = BassParams::new(3e-4, 2e-2, 5000, -601.0).unwrap();
        let counts: Vec<f64> = (0..600)
            .map(|i| {
                let t = (-600 + i) as f64;
                5000.0 * (truth.nu(t) - truth.nu(t - 1.0))
            })
            .collect();
        let fit = fit_bass_binned(&counts, -600, 5000, 12).unwrap();
        assert!((fit.params.innovation / truth.innovation - 1.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.params.imitation / truth.imitation - 1.0).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn short_series_rejected() {
        assert!(fit_bass(&[1.0; 10], 0, 10).is_err());
        assert!(fit_bass(&[-1.0; 40], 0, 10).is_err());
    }

    #[test]
    fn residuals_linear_in_surplus() {
        let p = BassParams::new(1e-3, 1e-2, 400, -51.0).unwrap();
        let mut counts: Vec<f64> = (0..50)
            .map(|i| {
                let t = (-50 + i) as f64;
                400.0 * (p.nu(t) - p.nu(t - 1.0))
            })
            .collect();
        let r = compute_residuals(&counts, -50, &p);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        counts[7] += 3.0;
        let r = compute_residuals(&counts, -50, &p);
        assert_relative_eq!(r[7], 3.0 / 20.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_series_floors_scale() {
        let d = decompose_residuals(&[2.5; 100], 0, 15, false, 50).unwrap();
        assert!(d.trend.iter().all(|t| (*t - 2.5).abs() < 1e-15));
        assert!(d.scale.iter().all(|s| *s == SCALE_FLOOR));
        assert!(d.j.iter().all(|j| j.is_finite()));
        assert_eq!(d.acf[0], 1.0);
    }

    #[test]
    fn stationary_flag_is_identity() {
        let r: Vec<f64> = (0..60).map(|i| (i as f64).sin()).collect();
        let d = decompose_residuals(&r, 0, 5, true, 20).unwrap();
        assert_eq!(d.j, r);
    }

    #[test]
    fn decomposition_preconditions() {
        assert!(decompose_residuals(&[1.0; 30], 0, 15, false, 5).is_err());
        assert!(decompose_residuals(&[1.0; 30], 0, 0, false, 5).is_err());
    }

    #[test]
    fn white_noise_acf_in_bands() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let r: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = decompose_residuals(&r, 0, 15, false, 100).unwrap();
        let band = 2.0 / (1000f64).sqrt();
        let inside = d.acf[1..].iter().filter(|c| c.abs() <= band).count();
        assert!(inside as f64 >= 0.9 * 100.0, "{inside} of 100 lags inside");
        assert!(d.acf.iter().all(|c| c.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn polynomial_recovers_cubic() {
        let xs: Vec<f64> = (-100..=0).map(f64::from).collect();
        let f = |x: f64| 1.0 - 0.02 * x + 3e-4 * x * x + 1e-6 * x * x * x;
        let ys: Vec<f64> = xs.iter().map(|x| f(*x)).collect();
        let p = Polynomial::fit(&xs, &ys, 3).unwrap();
        for x in [-100.0, -3.0, 50.0] {
            assert_relative_eq!(p.eval(x), f(x), max_relative = 1e-9);
        }
        assert!(Polynomial::fit(&[1.0, 2.0], &[1.0, 2.0], 3).is_err());
    }

    fn brownian_decomposition(first_day: i64, len: usize, w: usize) -> ResidualDecomposition {
        let mut acf = vec![0.0; w + 1];
        acf[0] = 1.0;
        ResidualDecomposition {
            first_day,
            r: vec![0.0; len],
            trend: vec![0.0; len],
            scale: vec![1.0; len],
            j: vec![0.0; len],
            window: 1,
            l: 0.0,
            s2: 1.0,
            acf,
            stationary: true,
        }
    }

    #[test]
    fn white_increments_give_brownian_covariance() {
        let h = TimeHorizon::new(30, 5, 0, 1).unwrap();
        let dec = brownian_decomposition(-35, 35, 30);
        let lim = extrapolate_and_assemble(&dec, 3, &h).unwrap();
        assert_eq!(lim.first_day, -30);
        assert_eq!(lim.last_day(), 5);
        for s in -30..=5 {
            assert!(lim.theta_at(s).unwrap().abs() < 1e-12);
            for t in -30..=5 {
                assert_relative_eq!(lim.gamma_at(s, t).unwrap(), (s.min(t) + 30) as f64, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn brownian_chi_covariance_is_window_overlap() {
        let w = 30;
        for offset in [0, 5] {
            let h = TimeHorizon::new(w, 5, offset, 1).unwrap();
            let dec = brownian_decomposition(-35, 35, w as usize);
            let lim = extrapolate_and_assemble(&dec, 3, &h).unwrap();
            let chi = chi_moments(&lim, &h).unwrap();
            for u in 0..=w as usize {
                assert_eq!(chi.mean[u], 0.0);
                for v in 0..=w as usize {
                    // overlap of [-u, T-u] and [-v, T-v]
                    let want = (5.0 - (u as f64 - v as f64).abs()).max(0.0);
                    assert_relative_eq!(chi.cov_at(u, v).unwrap(), want, epsilon = 1e-9);
                }
            }
            assert!(chi.cov_at(31, 0).is_err());
        }
    }

    #[test]
    fn increments_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let r: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = TimeHorizon::new(150, 20, 20, 1).unwrap();
        let dec = decompose_residuals(&r, -200, 7, false, 150).unwrap();
        let lim = extrapolate_and_assemble(&dec, 3, &h).unwrap();
        let size = lim.theta.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for (i, mu) in lim.increment_mean.iter().enumerate() {
            // exact up to the rounding of the running sum
            assert!((lim.theta[i + 1] - lim.theta[i] - mu).abs() <= 4.0 * f64::EPSILON * size);
        }
        // observed days reuse the decomposition directly
        let i = (-100 - lim.first_day - 1) as usize;
        assert_eq!(lim.increment_mean[i], dec.trend[100] + dec.l * dec.scale[100]);
    }

    fn min_eigenvalue(cov: &[f64], size: usize, step: usize) -> f64 {
        let idx: Vec<usize> = (0..size).step_by(step).collect();
        let m = DMatrix::from_fn(idx.len(), idx.len(), |a, b| cov[idx[a] * size + idx[b]]);
        m.symmetric_eigen().eigenvalues.min()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn chi_covariance_psd(seed in any::<u64>(), window in 2usize..10, offset_flag in any::<bool>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let w = 80u32;
            let len = 81;
            let r: Vec<f64> = (0..len).map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * (1.0 + 0.01 * i as f64)
            }).collect();
            let h = TimeHorizon::new(w, 20, if offset_flag { 20 } else { 0 }, 1).unwrap();
            let dec = decompose_residuals(&r, -(len as i64), window, false, w as usize).unwrap();
            let lim = extrapolate_and_assemble(&dec, 3, &h).unwrap();
            let n = lim.len();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(lim.gamma[i * n + j], lim.gamma[j * n + i]);
                }
            }
            let chi = chi_moments(&lim, &h).unwrap();
            let scale = chi.cov.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1.0);
            let ev = min_eigenvalue(&chi.cov, chi.size(), 3);
            prop_assert!(ev >= -1e-8 * scale, "smallest eigenvalue {}", ev);
        }

        #[test]
        fn nu_monotone_and_bounded(
            b in 1e-5f64..1e-1, c in 1e-4f64..1e-1, t1 in -2000.0f64..500.0, dt in 0.0f64..1000.0,
        ) {
            let p = BassParams::new(b, c, 1, -1096.0).unwrap();
            let (a, z) = (p.nu(t1), p.nu(t1 + dt));
            prop_assert!(a <= z);
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&z));
        }
    }
}
