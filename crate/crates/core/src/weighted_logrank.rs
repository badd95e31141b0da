//! The CEM weighted log-rank statistic `𝒲_t`, its kernel `K^n_s`, the
//! variance estimator `𝒱_τ` and the standardized test.
//!
//! Everything is evaluated on the event grid in ascending order. At an event
//! time `s` the at-risk sets still contain the subjects failing at `s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{MatchedCohort, Placement};
use crate::normal;
use crate::scalar::{pinv, KahanSum, Real};
use crate::survival::{Arm, EventGrid};

/// Deterministic left-continuous step function `W^n` on `[0, τ]`.
///
/// `values[j]` applies on `(breakpoints[j-1], breakpoints[j]]`, with
/// `values[0]` from 0 up to and including the first breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"), try_from = "RawWeightFunction<T>")]
pub struct WeightFunction<T> {
    breakpoints: Vec<T>,
    values: Vec<T>,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "T: Real"), deny_unknown_fields)]
struct RawWeightFunction<T> {
    #[serde(default)]
    breakpoints: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> TryFrom<RawWeightFunction<T>> for WeightFunction<T> {
    type Error = Error;

    fn try_from(raw: RawWeightFunction<T>) -> Result<Self> {
        Self::new(raw.breakpoints, raw.values)
    }
}

impl<T: Real> Default for WeightFunction<T> {
    fn default() -> Self {
        Self::constant(T::one())
    }
}

impl<T: Real> WeightFunction<T> {
    pub fn new(breakpoints: Vec<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::invalid(format!(
                "weight function needs {} values for {} breakpoints, got {}",
                breakpoints.len() + 1,
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::invalid("weight function entries must be finite"));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("weight function breakpoints must be strictly increasing"));
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(c: T) -> Self {
        Self {
            breakpoints: Vec::new(),
            values: vec![c],
        }
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    pub fn is_unit(&self) -> bool {
        self.values.iter().all(|&v| v == T::one())
    }

    #[inline]
    pub fn eval(&self, s: T) -> T {
        self.values[self.breakpoints.partition_point(|&b| b < s)]
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|&v| v * c).collect(),
        }
    }
}

/// Direction of the critical region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Reject when the standardized statistic is at least `z_α`.
    Upper,
    /// Reject when it is at most `−z_α`.
    Lower,
    #[default]
    TwoSided,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(Direction::Upper),
            "lower" => Ok(Direction::Lower),
            "two_sided" | "two-sided" => Ok(Direction::TwoSided),
            other => Err(Error::invalid(format!(
                "direction must be upper, lower or two_sided, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cem,
    Iptw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct PathPoint<T> {
    pub t: T,
    pub statistic: T,
}

/// Outcome of a weighted log-rank test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct TestResult<T> {
    pub method: Method,
    /// `𝒲_τ`.
    pub statistic: T,
    /// `𝒱_τ`.
    pub variance_estimate: T,
    /// `𝒲_τ · (𝒱_τ^{1/2})⁻`.
    pub standardized: T,
    pub p_lower: f64,
    pub p_upper: f64,
    pub p_two_sided: f64,
    pub alpha: f64,
    pub direction: Direction,
    pub critical_value: f64,
    pub reject: bool,
    /// Set when `𝒱_τ = 0`.
    pub degenerate: bool,
    /// `Ω^n`; only defined for the matched statistic.
    pub omega_n: Option<bool>,
    pub n1: usize,
    pub n0: usize,
    pub unmatched_count: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub path: Option<Vec<PathPoint<T>>>,
}

pub(crate) struct Diagnostics {
    pub method: Method,
    pub omega_n: Option<bool>,
    pub n1: usize,
    pub n0: usize,
    pub unmatched_count: usize,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

pub(crate) fn assemble<T: Real>(
    statistic: T,
    variance: T,
    path: Vec<PathPoint<T>>,
    alpha: f64,
    direction: Direction,
    diag: Diagnostics,
) -> TestResult<T> {
    let standardized = statistic * pinv(variance.sqrt());
    let z = standardized.as_f64();
    let p_lower = normal::cdf(z);
    let p_upper = normal::sf(z);
    let p_two_sided = (2.0 * p_lower.min(p_upper)).min(1.0);
    let (critical_value, reject) = match direction {
        Direction::Upper => {
            let c = normal::upper_point(alpha);
            (c, z >= c)
        }
        Direction::Lower => {
            let c = normal::upper_point(alpha);
            (c, z <= -c)
        }
        Direction::TwoSided => {
            let c = normal::upper_point(alpha / 2.0);
            (c, z.abs() >= c)
        }
    };
    TestResult {
        method: diag.method,
        statistic,
        variance_estimate: variance,
        standardized,
        p_lower,
        p_upper,
        p_two_sided,
        alpha,
        direction,
        critical_value,
        reject,
        degenerate: variance == T::zero(),
        omega_n: diag.omega_n,
        n1: diag.n1,
        n0: diag.n0,
        unmatched_count: diag.unmatched_count,
        path: Some(path),
    }
}

/// Pooled weighted processes sampled at every event-grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledProcesses<T> {
    pub times: Vec<T>,
    /// `𝒴̄^z_s`, indexed by [`Arm::slot`].
    pub at_risk: [Vec<T>; 2],
    /// `Δ𝒩̄^z_s`, indexed by [`Arm::slot`].
    pub increments: [Vec<T>; 2],
    /// `𝒴̄^z_0`.
    pub initial_at_risk: [T; 2],
}

impl<T: Real> PooledProcesses<T> {
    /// Single ascending sweep over a matched cohort using per-cell counts.
    pub fn from_matched(mc: &MatchedCohort<T>) -> Self {
        let cohort = mc.cohort();
        let subjects = cohort.subjects();
        let grid = EventGrid::build(cohort);

        let ncells = mc.cells().len();
        let mut y1c: Vec<usize> = mc.cells().iter().map(|c| c.treated.len()).collect();
        let mut y0c: Vec<usize> = mc.cells().iter().map(|c| c.controls.len()).collect();
        let contribution = |y1: usize, y0: usize| if y0 > 0 { y1 } else { 0 };

        let mut y1_total = mc.n1();
        let mut y0_total: usize = (0..ncells).map(|c| contribution(y1c[c], y0c[c])).sum();
        let initial_at_risk = [T::of_count(y0_total), T::of_count(y1_total)];

        let mut order: Vec<usize> = mc.g1().iter().chain(mc.g0()).copied().collect();
        order.sort_by(|&a, &b| {
            subjects[a]
                .observed_time
                .partial_cmp(&subjects[b].observed_time)
                .unwrap()
                .then(a.cmp(&b))
        });

        let n = grid.len();
        let mut at_risk = [Vec::with_capacity(n), Vec::with_capacity(n)];
        let mut increments = [Vec::with_capacity(n), Vec::with_capacity(n)];
        let mut next = 0;
        for (s, events) in grid.iter() {
            while next < order.len() && subjects[order[next]].observed_time < s {
                let k = order[next];
                if let Placement::Matched { arm, cell } = mc.placements()[k] {
                    let before = contribution(y1c[cell], y0c[cell]);
                    match arm {
                        Arm::Treated => {
                            y1c[cell] -= 1;
                            y1_total -= 1;
                        }
                        Arm::Control => y0c[cell] -= 1,
                    }
                    y0_total = y0_total + contribution(y1c[cell], y0c[cell]) - before;
                }
                next += 1;
            }
            let mut dn1 = 0usize;
            let mut dn0 = KahanSum::new();
            for ev in events {
                match mc.placements()[ev.subject] {
                    Placement::Matched { arm: Arm::Treated, .. } => dn1 += 1,
                    Placement::Matched { arm: Arm::Control, cell } => {
                        dn0.add(pinv(T::of_count(y0c[cell])) * T::of_count(y1c[cell]))
                    }
                    Placement::Unmatched { .. } => {}
                }
            }
            at_risk[0].push(T::of_count(y0_total));
            at_risk[1].push(T::of_count(y1_total));
            increments[0].push(dn0.value());
            increments[1].push(T::of_count(dn1));
        }
        Self {
            times: grid.times().to_vec(),
            at_risk,
            increments,
            initial_at_risk,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `{(𝒴̄¹₀+𝒴̄⁰₀)(𝒴̄¹₀𝒴̄⁰₀)⁻}^{1/2}`.
    pub fn normalizer(&self) -> T {
        let [y0, y1] = self.initial_at_risk;
        ((y1 + y0) * pinv(y1 * y0)).sqrt()
    }

    /// `K^n_s` at grid index `k`.
    pub fn kernel_at(&self, k: usize, w: &WeightFunction<T>) -> T {
        let (y0, y1) = (self.at_risk[0][k], self.at_risk[1][k]);
        self.normalizer() * pinv(y1 + y0) * y1 * y0 * w.eval(self.times[k])
    }

    /// `(𝒴̄¹_s)⁻Δ𝒩̄¹_s − (𝒴̄⁰_s)⁻Δ𝒩̄⁰_s` at grid index `k`.
    pub fn bracket_at(&self, k: usize) -> T {
        pinv(self.at_risk[1][k]) * self.increments[1][k] - pinv(self.at_risk[0][k]) * self.increments[0][k]
    }

    /// Cumulative `𝒲_t` at each grid time.
    pub fn statistic_path(&self, w: &WeightFunction<T>) -> Vec<PathPoint<T>> {
        let mut acc = KahanSum::new();
        (0..self.len())
            .map(|k| {
                acc.add(self.kernel_at(k, w) * self.bracket_at(k));
                PathPoint {
                    t: self.times[k],
                    statistic: acc.value(),
                }
            })
            .collect()
    }
}

/// `K^n_s` evaluated directly from the pooled at-risk processes.
pub fn kernel<T: Real>(mc: &MatchedCohort<T>, w: &WeightFunction<T>, s: T) -> T {
    let y1_0 = mc.pooled_at_risk(Arm::Treated, T::zero());
    let y0_0 = mc.pooled_at_risk(Arm::Control, T::zero());
    let y1 = mc.pooled_at_risk(Arm::Treated, s);
    let y0 = mc.pooled_at_risk(Arm::Control, s);
    ((y1_0 + y0_0) * pinv(y1_0 * y0_0)).sqrt() * pinv(y1 + y0) * y1 * y0 * w.eval(s)
}

/// `(t, 𝒲_t)` at every event-grid time; empty when there are no events in `(0, τ]`.
pub fn statistic_path<T: Real>(mc: &MatchedCohort<T>, w: &WeightFunction<T>) -> Vec<PathPoint<T>> {
    PooledProcesses::from_matched(mc).statistic_path(w)
}

/// `𝒲_τ`.
pub fn statistic<T: Real>(mc: &MatchedCohort<T>, w: &WeightFunction<T>) -> T {
    statistic_path(mc, w)
        .last()
        .map(|p| p.statistic)
        .unwrap_or_else(T::zero)
}

/// `Σ_s [(𝒴̄¹_s)⁻Δ𝒩̄¹_s − (𝒴̄⁰_s)⁻Δ𝒩̄⁰_s]`, the statistic without kernel.
pub fn unnormalized_bracket<T: Real>(mc: &MatchedCohort<T>) -> T {
    let p = PooledProcesses::from_matched(mc);
    (0..p.len()).map(|k| p.bracket_at(k)).collect::<KahanSum<T>>().value()
}

/// `𝒱_τ = (2 n₁)⁻ Σ_{i∈G¹} ∫₀^τ (W^n_s)² dN^i_s`.
pub fn variance_estimate<T: Real>(mc: &MatchedCohort<T>, w: &WeightFunction<T>) -> T {
    let tau = mc.cohort().horizon();
    let subjects = mc.cohort().subjects();
    let mut times: Vec<T> = mc
        .g1()
        .iter()
        .map(|&k| &subjects[k])
        .filter(|s| s.event && s.observed_time <= tau)
        .map(|s| s.observed_time)
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total = times
        .into_iter()
        .map(|s| {
            let v = w.eval(s);
            v * v
        })
        .collect::<KahanSum<T>>()
        .value();
    pinv(T::of(2.0) * T::of_count(mc.n1())) * total
}

/// Standardized CEM weighted log-rank test.
pub fn run_test<T: Real>(
    mc: &MatchedCohort<T>,
    w: &WeightFunction<T>,
    alpha: f64,
    direction: Direction,
) -> Result<TestResult<T>> {
    check_alpha(alpha)?;
    let path = statistic_path(mc, w);
    let stat = path.last().map(|p| p.statistic).unwrap_or_else(T::zero);
    let var = variance_estimate(mc, w);
    Ok(assemble(
        stat,
        var,
        path,
        alpha,
        direction,
        Diagnostics {
            method: Method::Cem,
            omega_n: Some(mc.omega_n_holds()),
            n1: mc.n1(),
            n0: mc.n0(),
            unmatched_count: mc.unmatched_count(),
        },
    ))
}
