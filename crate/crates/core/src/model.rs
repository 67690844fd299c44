//! Clock conventions, claim-time measures, rebate policies and the per-item
//! claim functional.
//!
//! All times are in days. Sales happen on the clock `[-W + offset, T + offset]`
//! and the forecast window is `[offset, offset + T]`. A claim at age `c` of an
//! item sold at `s` lands at calendar time `s + c`.
//!
//! The types here are generic over [`Scalar`] so the same code runs in f32 for
//! bulk simulation and f64 for estimation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Warranty length `W`, forecast period length `T`, window start `offset` and
/// sales-volume scale `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeHorizon {
    warranty: u32,
    period: u32,
    offset: u32,
    n: u64,
}

impl TimeHorizon {
    pub fn new(warranty: u32, period: u32, offset: u32, n: u64) -> Result<Self> {
        if period == 0 {
            return Err(Error::domain("forecast period T must be positive"));
        }
        if 2 * u64::from(period) >= u64::from(warranty) {
            return Err(Error::domain(format!("need 2T < W, got T = {period}, W = {warranty}")));
        }
        if n == 0 {
            return Err(Error::domain("sales scale n must be at least 1"));
        }
        if offset != 0 && offset != period {
            return Err(Error::domain(format!(
                "window offset must be 0 or T = {period}, got {offset}"
            )));
        }
        Ok(TimeHorizon {
            warranty,
            period,
            offset,
            n,
        })
    }

    pub fn warranty(&self) -> u32 {
        self.warranty
    }

    pub fn period(&self) -> u32 {
        self.period
    }

    pub fn offset(&self) -> u32 {
        self.offset
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Same clock, window moved to start at `offset`.
    pub fn with_offset(&self, offset: u32) -> Result<Self> {
        TimeHorizon::new(self.warranty, self.period, offset, self.n)
    }

    pub fn with_n(&self, n: u64) -> Result<Self> {
        TimeHorizon::new(self.warranty, self.period, self.offset, n)
    }

    /// First and last day of the forecast window.
    pub fn window(&self) -> (i64, i64) {
        let start = i64::from(self.offset);
        (start, start + i64::from(self.period))
    }

    /// Range of sale times whose claims can land in the window.
    pub fn sale_range(&self) -> (i64, i64) {
        let (start, end) = self.window();
        (start - i64::from(self.warranty), end)
    }
}

/// Which piece of the claim functional applies to a sale time `x`
/// (measured relative to the window start).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaleBranch {
    /// `0 <= x <= T`: claims at ages `[0, T - x]` land in the window.
    InPeriod,
    /// `T - W < x < 0`: ages `[-x, T - x]`.
    Straddling,
    /// `-W <= x <= T - W`: ages `[-x, W]`.
    Early,
}

/// Age window `[lo, hi]` (closed at both ends) of claims that fall in the
/// forecast window for an item sold at `sale_time`.
pub fn claim_age_window<S: Scalar>(sale_time: S, horizon: &TimeHorizon) -> Result<(S, S, SaleBranch)> {
    let w = S::from_u32(horizon.warranty).unwrap();
    let t = S::from_u32(horizon.period).unwrap();
    let x = sale_time - S::from_u32(horizon.offset).unwrap();
    if !(x >= -w && x <= t) {
        let (lo, hi) = horizon.sale_range();
        return Err(Error::domain(format!("sale time {:?} outside [{lo}, {hi}]", sale_time)));
    }
    let window = if x >= S::zero() {
        (S::zero(), t - x, SaleBranch::InPeriod)
    } else if x > t - w {
        (-x, t - x, SaleBranch::Straddling)
    } else {
        (-x, w, SaleBranch::Early)
    };
    Ok(window)
}

/// Point measure of claim ages (days after sale) for one item.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClaimsMeasure<S> {
    points: Vec<S>,
}

impl<S: Scalar> ClaimsMeasure<S> {
    pub fn empty() -> Self {
        ClaimsMeasure { points: Vec::new() }
    }

    /// Builds a measure from claim ages; each must lie in `[0, warranty]`.
    pub fn new(mut points: Vec<S>, warranty: S) -> Result<Self> {
        if let Some(bad) = points.iter().find(|p| !(**p >= S::zero() && **p <= warranty)) {
            return Err(Error::domain(format!(
                "claim age {:?} outside [0, {:?}]",
                bad, warranty
            )));
        }
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(ClaimsMeasure { points })
    }

    /// Sorted claim ages.
    pub fn points(&self) -> &[S] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `M([0, W])`.
    pub fn total_mass(&self) -> usize {
        self.points.len()
    }

    /// Number of points in the closed interval `[lo, hi]`.
    pub fn count_in(&self, lo: S, hi: S) -> usize {
        let start = self.points.partition_point(|p| *p < lo);
        let end = self.points.partition_point(|p| *p <= hi);
        end.saturating_sub(start)
    }

    /// `∫_[lo, hi] r(y) M(dy)`.
    pub fn integrate(&self, lo: S, hi: S, rebate: &RebateFunction<S>) -> S {
        let start = self.points.partition_point(|p| *p < lo);
        let end = self.points.partition_point(|p| *p <= hi);
        if start >= end {
            return S::zero();
        }
        if rebate.is_free_replacement() {
            return S::from_usize(end - start).unwrap();
        }
        self.points[start..end]
            .iter()
            .fold(S::zero(), |acc, p| acc + rebate.eval(*p))
    }
}

/// Fitted mean claims measure: linear density `a·x + b` on `(0, W)` plus atoms at 0 and W.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanClaimsMeasure<S> {
    slope: S,
    intercept: S,
    atom_zero: S,
    atom_warranty: S,
    warranty: S,
}

impl<S: Scalar> MeanClaimsMeasure<S> {
    pub fn new(slope: S, intercept: S, atom_zero: S, atom_warranty: S, warranty: S) -> Result<Self> {
        if !(warranty > S::zero()) {
            return Err(Error::domain("warranty length must be positive"));
        }
        if !(atom_zero >= S::zero() && atom_warranty >= S::zero()) {
            return Err(Error::validation(format!(
                "atoms must be non-negative, got {:?} at 0 and {:?} at W",
                atom_zero, atom_warranty
            )));
        }
        let at_end = slope * warranty + intercept;
        if intercept < S::zero() || at_end < S::zero() {
            let root = -intercept / slope;
            let (lo, hi) = if intercept < S::zero() {
                (S::zero(), root.min(warranty))
            } else {
                (root.max(S::zero()), warranty)
            };
            return Err(Error::validation(format!(
                "fitted claim density a·x + b is negative on ({:?}, {:?})",
                lo, hi
            )));
        }
        Ok(MeanClaimsMeasure {
            slope,
            intercept,
            atom_zero,
            atom_warranty,
            warranty,
        })
    }

    pub fn slope(&self) -> S {
        self.slope
    }

    pub fn intercept(&self) -> S {
        self.intercept
    }

    pub fn atom_zero(&self) -> S {
        self.atom_zero
    }

    pub fn atom_warranty(&self) -> S {
        self.atom_warranty
    }

    pub fn warranty(&self) -> S {
        self.warranty
    }

    /// Density on `(0, W)`.
    pub fn density(&self, x: S) -> S {
        self.slope * x + self.intercept
    }

    /// Largest density value on `[0, W]`.
    pub fn max_density(&self) -> S {
        self.density(S::zero()).max(self.density(self.warranty))
    }

    /// `m([0, W])`.
    pub fn total_mass(&self) -> S {
        let w = self.warranty;
        self.slope * w * w / S::two() + self.intercept * w + self.atom_zero + self.atom_warranty
    }
}

/// Shape of the rebate function `r` on `[0, W]`.
#[derive(Debug, Clone, PartialEq)]
pub enum RebateKind<S> {
    /// `r ≡ 1`.
    FreeReplacement,
    /// `r(t) = 1 - (1 - residual)·t/W`.
    Linear { residual: S },
    /// `r(t) = 1 - (1 - residual)·(t/W)²`.
    Quadratic { residual: S },
    /// Daily values `r(0), r(1), ..., r(W)`, linearly interpolated.
    Tabulated { values: Vec<S> },
}

/// Fraction of the unit price refunded for a claim at a given age.
#[derive(Debug, Clone, PartialEq)]
pub struct RebateFunction<S> {
    kind: RebateKind<S>,
    unit_price: S,
    warranty: S,
}

impl<S: Scalar> RebateFunction<S> {
    pub fn free_replacement(warranty: S) -> Self {
        RebateFunction {
            kind: RebateKind::FreeReplacement,
            unit_price: S::one(),
            warranty,
        }
    }

    pub fn linear(warranty: S, residual: S, unit_price: S) -> Result<Self> {
        Self::build(RebateKind::Linear { residual }, unit_price, warranty)
    }

    pub fn quadratic(warranty: S, residual: S, unit_price: S) -> Result<Self> {
        Self::build(RebateKind::Quadratic { residual }, unit_price, warranty)
    }

    /// Daily table of rebate fractions; the warranty length is `values.len() - 1`.
    pub fn tabulated(values: Vec<S>, unit_price: S) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::domain("tabulated rebate needs at least two daily values"));
        }
        let warranty = S::from_usize(values.len() - 1).unwrap();
        Self::build(RebateKind::Tabulated { values }, unit_price, warranty)
    }

    fn build(kind: RebateKind<S>, unit_price: S, warranty: S) -> Result<Self> {
        if !(unit_price > S::zero()) {
            return Err(Error::domain("unit price must be positive"));
        }
        if !(warranty > S::zero()) {
            return Err(Error::domain("warranty length must be positive"));
        }
        match &kind {
            RebateKind::FreeReplacement => {}
            RebateKind::Linear { residual } | RebateKind::Quadratic { residual } => {
                if !(*residual >= S::zero() && *residual <= S::one()) {
                    return Err(Error::validation(format!(
                        "rebate residual fraction {:?} outside [0, 1]",
                        residual
                    )));
                }
            }
            RebateKind::Tabulated { values } => {
                if values[0] != S::one() {
                    return Err(Error::validation("tabulated rebate must start at r(0) = 1"));
                }
                for (day, pair) in values.windows(2).enumerate() {
                    if pair[1] > pair[0] {
                        return Err(Error::validation(format!(
                            "tabulated rebate increases between days {day} and {}",
                            day + 1
                        )));
                    }
                }
                if values.iter().any(|v| *v < S::zero()) {
                    return Err(Error::validation("tabulated rebate has negative values"));
                }
            }
        }
        Ok(RebateFunction {
            kind,
            unit_price,
            warranty,
        })
    }

    pub fn kind(&self) -> &RebateKind<S> {
        &self.kind
    }

    pub fn unit_price(&self) -> S {
        self.unit_price
    }

    pub fn warranty(&self) -> S {
        self.warranty
    }

    pub fn is_free_replacement(&self) -> bool {
        matches!(self.kind, RebateKind::FreeReplacement)
    }

    /// `r(t)`, with `t` clamped into `[0, W]`.
    pub fn eval(&self, t: S) -> S {
        let t = t.max(S::zero()).min(self.warranty);
        match &self.kind {
            RebateKind::Tabulated { values } => {
                let floor = t.floor();
                let i = floor.to_usize().unwrap();
                if i + 1 >= values.len() {
                    return values[values.len() - 1];
                }
                let frac = t - floor;
                values[i] + (values[i + 1] - values[i]) * frac
            }
            _ => {
                let [c0, c1, c2] = self.poly_coeffs().unwrap();
                c0 + t * (c1 + t * c2)
            }
        }
    }

    /// Coefficients `[c0, c1, c2]` of `r(t) = c0 + c1·t + c2·t²` for polynomial kinds.
    pub fn poly_coeffs(&self) -> Option<[S; 3]> {
        let w = self.warranty;
        match &self.kind {
            RebateKind::FreeReplacement => Some([S::one(), S::zero(), S::zero()]),
            RebateKind::Linear { residual } => Some([S::one(), -(S::one() - *residual) / w, S::zero()]),
            RebateKind::Quadratic { residual } => Some([S::one(), S::zero(), -(S::one() - *residual) / (w * w)]),
            RebateKind::Tabulated { .. } => None,
        }
    }
}

/// The mean measure `m` reweighted by the rebate function: `m̃(A) = ∫_A r dm`.
#[derive(Debug, Clone, Copy)]
pub struct WeightedMeasure<'a, S> {
    pub base: &'a MeanClaimsMeasure<S>,
    pub weight: &'a RebateFunction<S>,
}

impl<'a, S: Scalar> WeightedMeasure<'a, S> {
    pub fn new(base: &'a MeanClaimsMeasure<S>, weight: &'a RebateFunction<S>) -> Self {
        WeightedMeasure { base, weight }
    }

    /// `∫_[s,t] r(y)(a·y + b) dy`, plus `r(0)·m({0})` when `s = 0` and the left
    /// atom is included, plus `r(W)·m({W})` when `t = W` and the right atom is included.
    pub fn weighted_mass(&self, s: S, t: S, include_left_atom: bool, include_right_atom: bool) -> Result<S> {
        let w = self.base.warranty;
        if !(s >= S::zero() && s <= t && t <= w) {
            return Err(Error::domain(format!(
                "interval [{:?}, {:?}] not inside [0, {:?}]",
                s, t, w
            )));
        }
        let mut mass = match self.weight.poly_coeffs() {
            Some(r) => self.polynomial_density_integral(r, s, t),
            None => self.tabulated_density_integral(s, t),
        };
        if include_left_atom && s == S::zero() {
            mass += self.base.atom_zero * self.weight.eval(S::zero());
        }
        if include_right_atom && t == w {
            mass += self.base.atom_warranty * self.weight.eval(w);
        }
        Ok(mass)
    }

    /// `m̃([s, t])` with both ends closed, so atoms count whenever the interval touches them.
    pub fn closed_mass(&self, s: S, t: S) -> Result<S> {
        self.weighted_mass(s, t, true, true)
    }

    fn polynomial_density_integral(&self, r: [S; 3], s: S, t: S) -> S {
        let (a, b) = (self.base.slope, self.base.intercept);
        // (r0 + r1 y + r2 y²)(a y + b)
        let coeffs = [r[0] * b, r[0] * a + r[1] * b, r[1] * a + r[2] * b, r[2] * a];
        let antiderivative = |y: S| {
            let mut acc = S::zero();
            let mut power = y;
            for (k, c) in coeffs.iter().enumerate() {
                acc += *c * power / S::from_usize(k + 1).unwrap();
                power *= y;
            }
            acc
        };
        antiderivative(t) - antiderivative(s)
    }

    fn tabulated_density_integral(&self, s: S, t: S) -> S {
        let integrand = |y: S| self.weight.eval(y) * self.base.density(y);
        let mut acc = S::zero();
        let mut left = s;
        while left < t {
            let right = (left.floor() + S::one()).min(t);
            acc += (integrand(left) + integrand(right)) / S::two() * (right - left);
            left = right;
        }
        acc
    }
}

/// `δ(x) = ∫ r(y) M(dy)` over the claim-age window of a sale at `sale_time`.
///
/// With `r ≡ 1` this is the number of the item's claims that land in the
/// forecast window.
pub fn delta_value<S: Scalar>(
    measure: &ClaimsMeasure<S>,
    sale_time: S,
    rebate: &RebateFunction<S>,
    horizon: &TimeHorizon,
) -> Result<S> {
    let (lo, hi, _) = claim_age_window(sale_time, horizon)?;
    Ok(measure.integrate(lo, hi, rebate))
}
