//! Independent reference computations.
//!
//! These are deliberately naive: every risk set is rebuilt by scanning the
//! whole cohort, and nothing here calls into the sweep used by the test
//! statistics. They exist to cross-check the main path.

use crate::matching::{MatchedCohort, Placement, StratumId};
use crate::scalar::{pinv, Real};
use crate::simgen::{generate_replicate, HazardModel, Scenario};
use crate::survival::{Arm, Cohort, SubjectRecord};
use crate::weighted_logrank::WeightFunction;
use crate::error::{Error, Result};

fn distinct_event_times<T: Real>(cohort: &Cohort<T>) -> Vec<T> {
    let tau = cohort.horizon();
    let mut ts: Vec<T> = cohort
        .subjects()
        .iter()
        .filter(|s| s.event && s.observed_time <= tau)
        .map(|s| s.observed_time)
        .collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    ts
}

fn count<T: Real>(cohort: &Cohort<T>, pred: impl Fn(&SubjectRecord<T>) -> bool) -> T {
    let mut c = T::zero();
    for s in cohort.subjects() {
        if pred(s) {
            c = c + T::one();
        }
    }
    c
}

/// Textbook two-sample log-rank: `Σ(d₁ − Y₁d/Y)` and its hypergeometric variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalLogrank<T> {
    pub numerator: T,
    pub variance: T,
}

impl<T: Real> ClassicalLogrank<T> {
    pub fn z(&self) -> T {
        self.numerator * pinv(self.variance.sqrt())
    }
}

pub fn classical_logrank<T: Real>(cohort: &Cohort<T>) -> ClassicalLogrank<T> {
    let mut numerator = T::zero();
    let mut variance = T::zero();
    for s in distinct_event_times(cohort) {
        let y1 = count(cohort, |r| r.arm == Arm::Treated && r.observed_time >= s);
        let y0 = count(cohort, |r| r.arm == Arm::Control && r.observed_time >= s);
        let d1 = count(cohort, |r| r.arm == Arm::Treated && r.event && r.observed_time == s);
        let d0 = count(cohort, |r| r.arm == Arm::Control && r.event && r.observed_time == s);
        let y = y1 + y0;
        let d = d1 + d0;
        numerator = numerator + d1 - y1 * d / y;
        if y > T::one() {
            variance = variance + y1 * y0 * d * (y - d) / (y * y * (y - T::one()));
        }
    }
    ClassicalLogrank {
        numerator,
        variance,
    }
}

/// Difference of arm-wise Nelson–Aalen increments, `Σ_s [d₁/Y₁ − d₀/Y₀]`.
pub fn two_sample_bracket<T: Real>(cohort: &Cohort<T>) -> T {
    let mut total = T::zero();
    for s in distinct_event_times(cohort) {
        let y1 = count(cohort, |r| r.arm == Arm::Treated && r.observed_time >= s);
        let y0 = count(cohort, |r| r.arm == Arm::Control && r.observed_time >= s);
        let d1 = count(cohort, |r| r.arm == Arm::Treated && r.event && r.observed_time == s);
        let d0 = count(cohort, |r| r.arm == Arm::Control && r.event && r.observed_time == s);
        total = total + d1 / y1 - d0 / y0;
    }
    total
}

/// `A_t = Λ(t ∧ T̃ | x, z)`.
pub fn compensator<T: Real>(subject: &SubjectRecord<T>, hazard: &HazardModel, t: T) -> T {
    hazard.cumulative(t.min(subject.observed_time), &subject.covariates, subject.arm)
}

/// Monte-Carlo summary of `M_τ = N_τ − A_τ` over simulated subjects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleCheck {
    pub draws: usize,
    pub mean: f64,
    pub std_error: f64,
    /// Sample variance of `M_τ`.
    pub variance: f64,
    /// Mean of `A_τ`, the predicted variance of `M_τ`.
    pub mean_compensator: f64,
    /// Standard error of the sample variance of `M_τ` minus `A_τ`, i.e. of `mean(M² − A)`.
    pub variance_gap_std_error: f64,
}

pub fn martingale_residual_mean(scenario: &Scenario, replications: usize) -> Result<MartingaleCheck> {
    if replications < 100 {
        return Err(Error::InvalidArgument(format!(
            "at least 100 replications required, got {replications}"
        )));
    }
    let hazard = scenario.hazard();
    let mut residuals = Vec::new();
    let mut comps = Vec::new();
    for r in 0..replications {
        let cohort: Cohort<f64> = generate_replicate(scenario, r as u64)?;
        let tau = cohort.horizon();
        for s in cohort.subjects() {
            let a = compensator(s, &hazard, tau);
            let n = if s.counting(tau) { 1.0 } else { 0.0 };
            residuals.push(n - a);
            comps.push(a);
        }
    }
    Ok(summarize_martingale(&residuals, &comps))
}

/// Summary from raw residuals and compensators.
pub fn summarize_martingale(residuals: &[f64], comps: &[f64]) -> MartingaleCheck {
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let variance = residuals.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mean_compensator = comps.iter().sum::<f64>() / n;
    // E[M² − A] = 0 by the predictable quadratic variation identity
    let gaps: Vec<f64> = residuals.iter().zip(comps).map(|(m, a)| m * m - a).collect();
    let gap_mean = gaps.iter().sum::<f64>() / n;
    let gap_var = gaps.iter().map(|g| (g - gap_mean).powi(2)).sum::<f64>() / (n - 1.0);
    MartingaleCheck {
        draws: residuals.len(),
        mean,
        std_error: (variance / n).sqrt(),
        variance,
        mean_compensator,
        variance_gap_std_error: (gap_var / n).sqrt(),
    }
}

/// Kaplan–Meier estimate with Greenwood standard errors at each distinct event time.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Vec<(f64, f64, f64)> {
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());
    let mut out = Vec::new();
    let mut at_risk = times.len() as f64;
    let mut surv = 1.0;
    let mut greenwood = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let t = times[idx[i]];
        let mut d = 0.0;
        let mut leaving = 0.0;
        while i < idx.len() && times[idx[i]] == t {
            if events[idx[i]] {
                d += 1.0;
            }
            leaving += 1.0;
            i += 1;
        }
        if d > 0.0 {
            surv *= 1.0 - d / at_risk;
            if at_risk > d {
                greenwood += d / (at_risk * (at_risk - d));
            }
            out.push((t, surv, surv * greenwood.sqrt()));
        }
        at_risk -= leaving;
    }
    out
}

/// `ℳ¹_τ, ℳ⁰_τ, ℰ¹_τ, ℰ⁰_τ` assembled from known compensators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition<T> {
    pub martingale: [T; 2],
    pub drift: [T; 2],
}

impl<T: Real> Decomposition<T> {
    /// `ℳ¹ − ℳ⁰ + ℰ¹ − ℰ⁰`.
    pub fn total(&self) -> T {
        self.martingale[1] - self.martingale[0] + self.drift[1] - self.drift[0]
    }
}

struct NaiveCem<'a, T> {
    mc: &'a MatchedCohort<T>,
    strata: Vec<Option<StratumId>>,
}

impl<'a, T: Real> NaiveCem<'a, T> {
    fn new(mc: &'a MatchedCohort<T>) -> Self {
        let strata = mc
            .cohort()
            .subjects()
            .iter()
            .map(|s| mc.scheme().assign(&s.covariates).ok().flatten())
            .collect();
        Self { mc, strata }
    }

    fn in_group(&self, k: usize, arm: Arm) -> bool {
        matches!(self.mc.placements()[k], Placement::Matched { arm: a, .. } if a == arm)
    }

    fn weight(&self, k: usize, s: T) -> T {
        let subjects = self.mc.cohort().subjects();
        if self.in_group(k, Arm::Treated) {
            return T::one();
        }
        if !self.in_group(k, Arm::Control) {
            return T::zero();
        }
        let mut treated = T::zero();
        let mut controls = T::zero();
        for (j, o) in subjects.iter().enumerate() {
            if self.strata[j] == self.strata[k] && o.observed_time >= s {
                match o.arm {
                    Arm::Treated => treated = treated + T::one(),
                    Arm::Control => controls = controls + T::one(),
                }
            }
        }
        pinv(controls) * treated
    }

    fn pooled(&self, arm: Arm, s: T) -> T {
        let subjects = self.mc.cohort().subjects();
        let mut total = T::zero();
        for (k, o) in subjects.iter().enumerate() {
            if self.in_group(k, arm) && o.observed_time >= s {
                total = total + self.weight(k, s);
            }
        }
        total
    }

    fn kernel(&self, w: &WeightFunction<T>, s: T) -> T {
        let (a1, a0) = (self.pooled(Arm::Treated, T::zero()), self.pooled(Arm::Control, T::zero()));
        let (y1, y0) = (self.pooled(Arm::Treated, s), self.pooled(Arm::Control, s));
        ((a1 + a0) * pinv(a1 * a0)).sqrt() * pinv(y1 + y0) * y1 * y0 * w.eval(s)
    }
}

/// Martingale/drift decomposition of `𝒲_τ` under a known hazard.
///
/// Integrals against `Λ` are exact: between consecutive observed times (and
/// weight breakpoints) every integrand is constant and equal to its value at
/// the right end of the interval.
pub fn decomposition<T: Real>(
    mc: &MatchedCohort<T>,
    hazard: &HazardModel,
    w: &WeightFunction<T>,
) -> Decomposition<T> {
    let naive = NaiveCem::new(mc);
    let subjects = mc.cohort().subjects();
    let tau = mc.cohort().horizon();

    let mut points: Vec<T> = subjects
        .iter()
        .map(|s| s.observed_time)
        .chain(w.breakpoints().iter().copied())
        .filter(|&t| t > T::zero() && t < tau)
        .collect();
    points.push(T::zero());
    points.push(tau);
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();

    let mut martingale = [T::zero(); 2];
    let mut drift = [T::zero(); 2];
    for arm in [Arm::Control, Arm::Treated] {
        let z = arm.slot();
        let members: Vec<usize> = (0..subjects.len()).filter(|&k| naive.in_group(k, arm)).collect();
        // jump part of ℳ^z
        for &k in &members {
            let s = &subjects[k];
            if s.event && s.observed_time <= tau {
                let t = s.observed_time;
                martingale[z] =
                    martingale[z] + naive.kernel(w, t) * pinv(naive.pooled(arm, t)) * naive.weight(k, t);
            }
        }
        // compensator part, shared between ℳ^z (subtracted) and ℰ^z
        for pair in points.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let factor = naive.kernel(w, b) * pinv(naive.pooled(arm, b));
            if factor == T::zero() {
                continue;
            }
            for &k in &members {
                let s = &subjects[k];
                let da = compensator(s, hazard, b) - compensator(s, hazard, a);
                if da != T::zero() {
                    let piece = factor * naive.weight(k, b) * da;
                    martingale[z] = martingale[z] - piece;
                    drift[z] = drift[z] + piece;
                }
            }
        }
    }
    Decomposition { martingale, drift }
}
