//! Inverse-probability-of-treatment-weighted log-rank baseline.
//!
//! Propensity scores come from a logistic regression fitted by damped
//! Newton–Raphson on a chosen subset of covariates (plus intercept).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{pinv, KahanSum, Real};
use crate::survival::{Arm, Cohort, EventGrid};
use crate::weighted_logrank::{
    assemble, check_alpha, Diagnostics, Direction, Method, PathPoint, PooledProcesses, TestResult,
    WeightFunction,
};

/// Newton–Raphson controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions<T> {
    /// Converged when the max-norm of the score is at most this.
    pub score_tol: T,
    /// Converged when the accepted step has Euclidean norm at most this.
    pub step_tol: T,
    pub max_iter: usize,
    /// Step halvings allowed when the log-likelihood decreases.
    pub max_halvings: usize,
    /// Coefficient norm treated as divergence (separation).
    pub divergence_norm: T,
}

impl<T: Real> Default for LogisticOptions<T> {
    fn default() -> Self {
        // tolerances are stated for f64 and widened in proportion for coarser types
        let ratio = (T::epsilon().as_f64() / f64::EPSILON).max(1.0);
        Self {
            score_tol: T::of(1e-10 * ratio),
            step_tol: T::of(1e-12 * ratio),
            max_iter: 100,
            max_halvings: 30,
            divergence_norm: T::of(1e4),
        }
    }
}

/// Fitted propensity model `P(Z=1|X) = logistic(α₀ + Σ α_j X_{sel_j})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct LogisticModel<T> {
    /// Zero-based covariate positions used after the intercept.
    pub feature_selector: Vec<usize>,
    /// `(α̂₀, α̂₁, …)`.
    pub coefficients: Vec<T>,
    /// Square roots of the diagonal of the inverse observed information.
    pub standard_errors: Vec<T>,
    pub log_likelihood: T,
    pub converged: bool,
    pub iterations: usize,
}

impl<T: Real> LogisticModel<T> {
    pub fn linear_predictor(&self, x: &[T]) -> T {
        self.feature_selector
            .iter()
            .zip(&self.coefficients[1..])
            .fold(self.coefficients[0], |acc, (&j, &b)| acc + b * x[j])
    }

    /// `p̂ = P(Z=1|x)`.
    pub fn propensity(&self, x: &[T]) -> T {
        logistic(self.linear_predictor(x))
    }
}

#[inline]
fn logistic<T: Real>(eta: T) -> T {
    if eta >= T::zero() {
        T::one() / (T::one() + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + e^η)` without overflow.
#[inline]
fn softplus<T: Real>(eta: T) -> T {
    eta.max(T::zero()) + (-eta.abs()).exp().ln_1p()
}

struct Design<T> {
    rows: Vec<Vec<T>>,
    labels: Vec<T>,
}

impl<T: Real> Design<T> {
    fn new(cohort: &Cohort<T>, selector: &[usize]) -> Result<Self> {
        let d = cohort.dim();
        if let Some(&j) = selector.iter().find(|&&j| j >= d) {
            return Err(Error::invalid(format!(
                "feature index {j} out of range for {d} covariates"
            )));
        }
        let rows = cohort
            .subjects()
            .iter()
            .map(|s| {
                std::iter::once(T::one())
                    .chain(selector.iter().map(|&j| s.covariates[j]))
                    .collect()
            })
            .collect();
        let labels = cohort
            .subjects()
            .iter()
            .map(|s| T::of_count(s.arm.slot()))
            .collect();
        Ok(Self { rows, labels })
    }

    fn eta(&self, beta: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(beta).fold(T::zero(), |a, (&x, &b)| a + x * b))
            .collect()
    }

    fn log_likelihood(&self, beta: &[T]) -> T {
        self.eta(beta)
            .into_iter()
            .zip(&self.labels)
            .map(|(e, &z)| z * e - softplus(e))
            .collect::<KahanSum<T>>()
            .value()
    }

    /// Score vector and observed information at `beta`.
    fn derivatives(&self, beta: &[T]) -> (Vec<T>, Vec<Vec<T>>) {
        let p = beta.len();
        let mut score = vec![KahanSum::new(); p];
        let mut info = vec![vec![KahanSum::new(); p]; p];
        for ((row, &z), eta) in self.rows.iter().zip(&self.labels).zip(self.eta(beta)) {
            let mu = logistic(eta);
            let v = mu * (T::one() - mu);
            for a in 0..p {
                score[a].add((z - mu) * row[a]);
                for b in 0..=a {
                    info[a][b].add(v * row[a] * row[b]);
                }
            }
        }
        let score = score.iter().map(KahanSum::value).collect();
        let mut h = vec![vec![T::zero(); p]; p];
        for a in 0..p {
            for b in 0..=a {
                h[a][b] = info[a][b].value();
                h[b][a] = h[a][b];
            }
        }
        (score, h)
    }

    /// Every treated row has η > 0 and every control row η < 0 (or the reverse).
    fn separates(&self, beta: &[T]) -> bool {
        let eta = self.eta(beta);
        let agree = |sign: T| {
            eta.iter()
                .zip(&self.labels)
                .all(|(&e, &z)| (z == T::one()) == (e * sign > T::zero()))
        };
        agree(T::one()) || agree(-T::one())
    }
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
fn cholesky<T: Real>(a: &[Vec<T>]) -> Option<Vec<Vec<T>>> {
    let p = a.len();
    let scale = (0..p).map(|i| a[i][i].abs()).fold(T::zero(), T::max);
    let floor = scale * T::epsilon() * T::of_count(p.max(1)) * T::of(16.0);
    let mut l = vec![vec![T::zero(); p]; p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > floor) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve<T: Real>(l: &[Vec<T>], b: &[T]) -> Vec<T> {
    let p = l.len();
    let mut y = vec![T::zero(); p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![T::zero(); p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s = s - l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

fn inverse_diagonal<T: Real>(l: &[Vec<T>]) -> Vec<T> {
    let p = l.len();
    (0..p)
        .map(|i| {
            let mut e = vec![T::zero(); p];
            e[i] = T::one();
            cholesky_solve(l, &e)[i]
        })
        .collect()
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &x| a.max(x.abs()))
}

/// Maximum-likelihood logistic regression of the arm on the selected covariates.
pub fn fit_logistic<T: Real>(
    cohort: &Cohort<T>,
    feature_selector: &[usize],
    options: &LogisticOptions<T>,
) -> Result<LogisticModel<T>> {
    let treated = cohort.arm_count(Arm::Treated);
    if treated == 0 || treated == cohort.len() {
        return Err(Error::Separation(format!(
            "{treated} of {} subjects treated; both arms are required",
            cohort.len()
        )));
    }
    let design = Design::new(cohort, feature_selector)?;
    let p = feature_selector.len() + 1;
    let mut beta = vec![T::zero(); p];
    let mut ll = design.log_likelihood(&beta);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iter {
        let (score, info) = design.derivatives(&beta);
        if max_abs(&score) <= options.score_tol {
            converged = true;
            break;
        }
        let l = match cholesky(&info) {
            Some(l) => l,
            None if design.separates(&beta) => {
                return Err(Error::Separation(
                    "linear predictor perfectly separates the arms".into(),
                ))
            }
            None => {
                return Err(Error::RankDeficient(
                    "information matrix is not positive definite".into(),
                ))
            }
        };
        let direction = cholesky_solve(&l, &score);
        iterations += 1;

        let mut step = T::one();
        let mut candidate: Vec<T> = beta.iter().zip(&direction).map(|(&b, &d)| b + d).collect();
        let mut ll_new = design.log_likelihood(&candidate);
        let mut halvings = 0;
        while !(ll_new >= ll) && halvings < options.max_halvings {
            step = step / T::of(2.0);
            candidate = beta
                .iter()
                .zip(&direction)
                .map(|(&b, &d)| b + step * d)
                .collect();
            ll_new = design.log_likelihood(&candidate);
            halvings += 1;
        }
        let step_norm = norm(&direction) * step;
        beta = candidate;
        ll = ll_new;
        if !beta.iter().all(|b| b.is_finite()) || norm(&beta) > options.divergence_norm {
            return Err(Error::Separation(format!(
                "coefficient norm exceeded {}",
                options.divergence_norm
            )));
        }
        if step_norm <= options.step_tol {
            converged = true;
            break;
        }
    }

    if design.separates(&beta) {
        return Err(Error::Separation(
            "linear predictor perfectly separates the arms".into(),
        ));
    }
    let (_, info) = design.derivatives(&beta);
    let standard_errors = match cholesky(&info) {
        Some(l) => inverse_diagonal(&l).into_iter().map(|v| v.sqrt()).collect(),
        None if design.separates(&beta) => {
            return Err(Error::Separation(
                "linear predictor perfectly separates the arms".into(),
            ))
        }
        None => {
            return Err(Error::RankDeficient(
                "information matrix is not positive definite".into(),
            ))
        }
    };
    Ok(LogisticModel {
        feature_selector: feature_selector.to_vec(),
        coefficients: beta,
        standard_errors,
        log_likelihood: ll,
        converged,
        iterations,
    })
}

/// Score vector of the log-likelihood at the model's coefficients.
pub fn logistic_score<T: Real>(cohort: &Cohort<T>, model: &LogisticModel<T>) -> Result<Vec<T>> {
    let design = Design::new(cohort, &model.feature_selector)?;
    Ok(design.derivatives(&model.coefficients).0)
}

/// Per-subject constant weights `ŵ = Z/p̂ + (1−Z)/(1−p̂)`, in cohort order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IptwWeights<T> {
    pub weights: Vec<T>,
}

impl<T: Real> IptwWeights<T> {
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![T::one(); n],
        }
    }

    pub fn max(&self) -> T {
        self.weights.iter().copied().fold(T::zero(), T::max)
    }
}

/// IPTW weights from a converged model; `cap` optionally truncates large weights.
pub fn iptw_weights<T: Real>(
    model: &LogisticModel<T>,
    cohort: &Cohort<T>,
    cap: Option<T>,
) -> Result<IptwWeights<T>> {
    if !model.converged {
        return Err(Error::invalid("propensity model did not converge"));
    }
    let mut weights = Vec::with_capacity(cohort.len());
    for s in cohort.subjects() {
        let eta = model.linear_predictor(&s.covariates);
        let p1 = logistic(eta);
        let p0 = logistic(-eta);
        if !(p1 > T::zero()) || !(p0 > T::zero()) {
            return Err(Error::Overflow(format!(
                "subject {}: propensity {p1} is numerically 0 or 1",
                s.id
            )));
        }
        let w = match s.arm {
            Arm::Treated => p1.recip(),
            Arm::Control => p0.recip(),
        };
        if !w.is_finite() {
            return Err(Error::Overflow(format!("subject {}: weight overflows", s.id)));
        }
        weights.push(match cap {
            Some(c) => w.min(c),
            None => w,
        });
    }
    Ok(IptwWeights { weights })
}

/// Processes needed by the IPTW statistic and its variance.
#[derive(Debug, Clone)]
pub struct IptwProcesses<T> {
    pub pooled: PooledProcesses<T>,
    /// `Σ_{i∈𝔾^z} (w^i)² Y^i_s`.
    pub squared_at_risk: [Vec<T>; 2],
    /// Unweighted `Ȳ_s`.
    pub total_at_risk: Vec<usize>,
    /// Unweighted `ΔN̄_s`.
    pub total_events: Vec<usize>,
}

impl<T: Real> IptwProcesses<T> {
    pub fn new(cohort: &Cohort<T>, weights: &IptwWeights<T>) -> Result<Self> {
        if weights.weights.len() != cohort.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} subjects",
                weights.weights.len(),
                cohort.len()
            )));
        }
        let subjects = cohort.subjects();
        let grid = EventGrid::build(cohort);
        let mut order: Vec<usize> = (0..cohort.len()).collect();
        order.sort_by(|&a, &b| {
            subjects[a]
                .observed_time
                .partial_cmp(&subjects[b].observed_time)
                .unwrap()
                .then(a.cmp(&b))
        });
        let sorted_times: Vec<T> = order.iter().map(|&k| subjects[k].observed_time).collect();

        // suffix sums over the time-sorted subjects: entry i covers order[i..]
        let n = order.len();
        let mut suffix_w = [vec![T::zero(); n + 1], vec![T::zero(); n + 1]];
        let mut suffix_w2 = [vec![T::zero(); n + 1], vec![T::zero(); n + 1]];
        let mut acc_w = [KahanSum::new(), KahanSum::new()];
        let mut acc_w2 = [KahanSum::new(), KahanSum::new()];
        for i in (0..n).rev() {
            let k = order[i];
            let z = subjects[k].arm.slot();
            let w = weights.weights[k];
            acc_w[z].add(w);
            acc_w2[z].add(w * w);
            for arm in 0..2 {
                suffix_w[arm][i] = acc_w[arm].value();
                suffix_w2[arm][i] = acc_w2[arm].value();
            }
        }

        let m = grid.len();
        let mut at_risk = [Vec::with_capacity(m), Vec::with_capacity(m)];
        let mut increments = [Vec::with_capacity(m), Vec::with_capacity(m)];
        let mut squared_at_risk = [Vec::with_capacity(m), Vec::with_capacity(m)];
        let mut total_at_risk = Vec::with_capacity(m);
        let mut total_events = Vec::with_capacity(m);
        for (s, events) in grid.iter() {
            let i = sorted_times.partition_point(|&t| t < s);
            let mut dn = [KahanSum::new(), KahanSum::new()];
            for ev in events {
                dn[ev.arm.slot()].add(weights.weights[ev.subject]);
            }
            for arm in 0..2 {
                at_risk[arm].push(suffix_w[arm][i]);
                squared_at_risk[arm].push(suffix_w2[arm][i]);
                increments[arm].push(dn[arm].value());
            }
            total_at_risk.push(n - i);
            total_events.push(events.len());
        }
        Ok(Self {
            pooled: PooledProcesses {
                times: grid.times().to_vec(),
                at_risk,
                increments,
                initial_at_risk: [suffix_w[0][0], suffix_w[1][0]],
            },
            squared_at_risk,
            total_at_risk,
            total_events,
        })
    }

    /// Variance of `𝒲_τ` under the null, normalized consistently with the kernel:
    /// `(𝒴̄¹₀+𝒴̄⁰₀)(𝒴̄¹₀𝒴̄⁰₀)⁻ Σ_s (W_s)² U_s {Ȳ_s(Ȳ_s−1)}⁻(Ȳ_s−ΔN̄_s)ΔN̄_s`.
    pub fn variance(&self, w: &WeightFunction<T>) -> T {
        let p = &self.pooled;
        let norm = p.normalizer();
        let mut acc = KahanSum::new();
        for k in 0..p.len() {
            let (y0, y1) = (p.at_risk[0][k], p.at_risk[1][k]);
            let total = pinv(y1 + y0);
            let u = (y0 * total).powi(2) * self.squared_at_risk[1][k]
                + (y1 * total).powi(2) * self.squared_at_risk[0][k];
            let ybar = T::of_count(self.total_at_risk[k]);
            let dn = T::of_count(self.total_events[k]);
            let wk = w.eval(p.times[k]);
            acc.add(wk * wk * u * pinv(ybar * (ybar - T::one())) * (ybar - dn) * dn);
        }
        norm * norm * acc.value()
    }
}

/// IPTW-weighted log-rank test: all subjects participate with constant weights.
pub fn iptw_logrank<T: Real>(
    cohort: &Cohort<T>,
    weights: &IptwWeights<T>,
    w: &WeightFunction<T>,
    alpha: f64,
    direction: Direction,
) -> Result<TestResult<T>> {
    check_alpha(alpha)?;
    let proc = IptwProcesses::new(cohort, weights)?;
    let path: Vec<PathPoint<T>> = proc.pooled.statistic_path(w);
    let stat = path.last().map(|p| p.statistic).unwrap_or_else(T::zero);
    let var = proc.variance(w);
    Ok(assemble(
        stat,
        var,
        path,
        alpha,
        direction,
        Diagnostics {
            method: Method::Iptw,
            omega_n: None,
            n1: cohort.arm_count(Arm::Treated),
            n0: cohort.arm_count(Arm::Control),
            unmatched_count: 0,
        },
    ))
}
