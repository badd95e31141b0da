//! Monte-Carlo replication harness.
//!
//! Replicates are generated from independent RNG streams and evaluated in
//! parallel; results are gathered in replicate order, so no emitted number
//! depends on the thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::iptw::{fit_logistic, iptw_logrank, iptw_weights, LogisticOptions};
use crate::matching::{match_cohort, CoarseningScheme};
use crate::normal;
use crate::simgen::{generate_replicate, Scenario, BINARY_DIMS, CONTINUOUS_DIMS, COVARIATE_DIMS};
use crate::survival::{Arm, Cohort};
use crate::weighted_logrank::{run_test, Direction, Method, TestResult, WeightFunction};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Cem,
    Iptw,
    #[default]
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> &'static [Method] {
        match self {
            MethodChoice::Cem => &[Method::Cem],
            MethodChoice::Iptw => &[Method::Iptw],
            MethodChoice::Both => &[Method::Cem, Method::Iptw],
        }
    }
}

impl std::str::FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cem" => Ok(MethodChoice::Cem),
            "iptw" => Ok(MethodChoice::Iptw),
            "both" => Ok(MethodChoice::Both),
            other => Err(Error::invalid(format!("method must be cem, iptw or both, got {other:?}"))),
        }
    }
}

fn default_box_lo() -> Vec<f64> {
    vec![-5.0; CONTINUOUS_DIMS]
}
fn default_box_hi() -> Vec<f64> {
    vec![5.0; CONTINUOUS_DIMS]
}
fn default_theta() -> f64 {
    0.3
}
fn default_bins_multiplier() -> usize {
    1
}

/// Grid partition scaled with the sample size:
/// `bins_per_dim = bins_multiplier · ⌊n^θ⌋` over the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeRule {
    #[serde(default = "default_box_lo")]
    pub box_lo: Vec<f64>,
    #[serde(default = "default_box_hi")]
    pub box_hi: Vec<f64>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// A value of 2 on `[−5, 5]` gives cells of width `5/⌊n^θ⌋`.
    #[serde(default = "default_bins_multiplier")]
    pub bins_multiplier: usize,
}

impl Default for SchemeRule {
    fn default() -> Self {
        Self {
            box_lo: default_box_lo(),
            box_hi: default_box_hi(),
            theta: default_theta(),
            bins_multiplier: default_bins_multiplier(),
        }
    }
}

impl SchemeRule {
    pub fn bins_for(&self, n: usize) -> usize {
        let base = (n as f64).powf(self.theta).floor() as usize;
        (self.bins_multiplier * base).max(1)
    }

    pub fn scheme_for(&self, n: usize) -> Result<CoarseningScheme<f64>> {
        CoarseningScheme::grid(&self.box_lo, &self.box_hi, self.bins_for(n), BINARY_DIMS)
    }
}

fn default_replications() -> usize {
    300
}
fn default_alpha() -> f64 {
    0.05
}
fn default_features() -> Vec<usize> {
    vec![0, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub method: MethodChoice,
    #[serde(default)]
    pub scheme: SchemeRule,
    /// Covariates (zero-based) entering the propensity model after the intercept.
    #[serde(default = "default_features")]
    pub iptw_features: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iptw_weight_cap: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_fn: Option<WeightFunction<f64>>,
    /// Worker threads; never affects results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            replications: default_replications(),
            method: MethodChoice::default(),
            scheme: SchemeRule::default(),
            iptw_features: default_features(),
            iptw_weight_cap: None,
            alpha: default_alpha(),
            direction: Direction::default(),
            weight_fn: None,
            threads: None,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.scheme.theta > 0.0) || !self.scheme.theta.is_finite() {
            return Err(Error::Config("theta must be positive".into()));
        }
        if self.scheme.bins_multiplier == 0 {
            return Err(Error::Config("bins_multiplier must be positive".into()));
        }
        if self.scheme.box_lo.len() != CONTINUOUS_DIMS || self.scheme.box_hi.len() != CONTINUOUS_DIMS {
            return Err(Error::Config(format!(
                "scheme box must have {CONTINUOUS_DIMS} continuous coordinates"
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(&j) = self.iptw_features.iter().find(|&&j| j >= COVARIATE_DIMS) {
            return Err(Error::Config(format!("iptw feature {j} out of range")));
        }
        if let Some(c) = self.iptw_weight_cap {
            if !(c >= 1.0) {
                return Err(Error::Config("iptw_weight_cap must be at least 1".into()));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.scheme
            .scheme_for(self.scenario.n)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Config with execution-only fields removed.
    pub fn canonical(&self) -> Self {
        Self {
            threads: None,
            output_dir: None,
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical JSON (sorted keys, no execution-only fields).
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self.canonical()).expect("config serializes");
        let text = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// One method's result on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub standardized: f64,
    pub statistic: f64,
    pub variance_estimate: f64,
    pub omega_n: Option<bool>,
    pub n1: usize,
}

impl MethodOutcome {
    fn from_result(r: &TestResult<f64>) -> Self {
        Self {
            method: r.method,
            standardized: r.standardized,
            statistic: r.statistic,
            variance_estimate: r.variance_estimate,
            omega_n: r.omega_n,
            n1: r.n1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    /// `#𝔾¹` in the generated cohort.
    pub treated_total: usize,
    /// Outcomes in method order; `Err` holds the message of a numeric failure.
    pub outcomes: Vec<std::result::Result<MethodOutcome, (Method, String)>>,
}

fn run_replicate(
    config: &ExperimentConfig,
    scheme: &CoarseningScheme<f64>,
    w: &WeightFunction<f64>,
    replicate: usize,
) -> Result<ReplicateOutcome> {
    let cohort: Cohort<f64> = generate_replicate(&config.scenario, replicate as u64)?;
    let mut outcomes = Vec::new();
    for &method in config.method.methods() {
        let outcome = match method {
            Method::Cem => {
                let mc = match_cohort(&cohort, scheme)?;
                run_test(&mc, w, config.alpha, config.direction).map(|r| MethodOutcome::from_result(&r))
            }
            Method::Iptw => fit_logistic(&cohort, &config.iptw_features, &LogisticOptions::default())
                .and_then(|m| iptw_weights(&m, &cohort, config.iptw_weight_cap))
                .and_then(|ws| iptw_logrank(&cohort, &ws, w, config.alpha, config.direction))
                .map(|r| MethodOutcome::from_result(&r)),
        };
        match outcome {
            Ok(o) => outcomes.push(Ok(o)),
            Err(e) if e.is_numeric() => outcomes.push(Err((method, e.to_string()))),
            Err(e) => return Err(e),
        }
    }
    Ok(ReplicateOutcome {
        replicate,
        treated_total: cohort.arm_count(Arm::Treated),
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionRates {
    pub upper: f64,
    pub lower: f64,
    pub two_sided: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub count: usize,
    /// Replicates whose fit failed numerically.
    pub failed_replicates: Vec<usize>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub skewness: Option<f64>,
    pub median: Option<f64>,
    /// Kolmogorov–Smirnov distance to N(0, 1).
    pub ks_distance: Option<f64>,
    pub rejection_rate: Option<RejectionRates>,
    pub mean_variance_estimate: Option<f64>,
    /// Empirical variance of the unstandardized statistic across replicates.
    pub statistic_variance: Option<f64>,
    pub mean_n1: Option<f64>,
    pub omega_n_rate: Option<f64>,
    pub histogram: Option<Histogram>,
    /// `(theoretical N(0,1) quantile, sample quantile)` pairs.
    pub qq: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub version: String,
    pub fingerprint: String,
    pub config: ExperimentConfig,
    pub bins_per_dim: usize,
    pub cell_count: u64,
    pub max_cell_diameter: f64,
    pub replications: usize,
    pub mean_treated_count: f64,
    /// `log(mean #𝔾¹) / log(n)`.
    pub beta_diagnostic: f64,
    pub methods: Vec<MethodSummary>,
}

impl ExperimentSummary {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub replicates: Vec<ReplicateOutcome>,
    pub summary: ExperimentSummary,
}

/// Runs every replicate and summarises the standardized statistics.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let scheme = config.scheme.scheme_for(config.scenario.n)?;
    let w = config.weight_fn.clone().unwrap_or_default();
    let job = || {
        (0..config.replications)
            .into_par_iter()
            .map(|r| run_replicate(config, &scheme, &w, r))
            .collect::<Result<Vec<_>>>()
    };
    let replicates = match config.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(job)?,
        None => job()?,
    };
    let summary = summarize(config, &scheme, &replicates);
    Ok(ExperimentOutput {
        replicates,
        summary,
    })
}

fn summarize(
    config: &ExperimentConfig,
    scheme: &CoarseningScheme<f64>,
    replicates: &[ReplicateOutcome],
) -> ExperimentSummary {
    let n_rep = replicates.len();
    let mean_treated =
        replicates.iter().map(|r| r.treated_total as f64).sum::<f64>() / n_rep as f64;
    let methods = config
        .method
        .methods()
        .iter()
        .map(|&m| {
            let mut ok = Vec::new();
            let mut failed = Vec::new();
            for r in replicates {
                for o in &r.outcomes {
                    match o {
                        Ok(o) if o.method == m => ok.push(o.clone()),
                        Err((fm, _)) if *fm == m => failed.push(r.replicate),
                        _ => {}
                    }
                }
            }
            summarize_method(m, &ok, failed, config.alpha)
        })
        .collect();
    ExperimentSummary {
        version: VERSION.to_string(),
        fingerprint: config.fingerprint(),
        config: config.canonical(),
        bins_per_dim: config.scheme.bins_for(config.scenario.n),
        cell_count: scheme.cell_count(),
        max_cell_diameter: scheme.max_diameter(),
        replications: n_rep,
        mean_treated_count: mean_treated,
        beta_diagnostic: mean_treated.ln() / (config.scenario.n as f64).ln(),
        methods,
    }
}

/// Linear-interpolation sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn ks_distance_to_standard_normal(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal::cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Freedman–Diaconis histogram; `None` for fewer than two points.
pub fn freedman_diaconis(sorted: &[f64]) -> Option<Histogram> {
    if sorted.len() < 2 {
        return None;
    }
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let h = 2.0 * iqr / (sorted.len() as f64).cbrt();
    let bins = if h > 0.0 && max > min {
        (((max - min) / h).ceil() as usize).clamp(1, 10_000)
    } else {
        1
    };
    let width = (max - min) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|k| if k == bins { max } else { min + width * k as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for &x in sorted {
        let k = if width > 0.0 {
            (((x - min) / width).floor() as usize).min(bins - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    Some(Histogram { edges, counts })
}

fn summarize_method(method: Method, ok: &[MethodOutcome], failed: Vec<usize>, alpha: f64) -> MethodSummary {
    let count = ok.len();
    let z: Vec<f64> = ok.iter().map(|o| o.standardized).collect();
    let mut sorted = z.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = count as f64;
    let mean_of = |v: &mut dyn Iterator<Item = f64>| v.sum::<f64>() / nf;
    let sample_var = |xs: &[f64]| -> Option<f64> {
        if xs.len() < 2 {
            return None;
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        Some(xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0))
    };

    let mean = (count > 0).then(|| mean_of(&mut z.iter().copied()));
    let sd = sample_var(&z).map(f64::sqrt);
    let skewness = mean.filter(|_| count >= 2).and_then(|m| {
        let m2 = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / nf;
        let m3 = z.iter().map(|x| (x - m).powi(3)).sum::<f64>() / nf;
        (m2 > 0.0).then(|| m3 / m2.powf(1.5))
    });
    let upper = normal::upper_point(alpha);
    let two = normal::upper_point(alpha / 2.0);
    let rejection_rate = (count > 0).then(|| RejectionRates {
        upper: z.iter().filter(|&&x| x >= upper).count() as f64 / nf,
        lower: z.iter().filter(|&&x| x <= -upper).count() as f64 / nf,
        two_sided: z.iter().filter(|&&x| x.abs() >= two).count() as f64 / nf,
    });
    let raw: Vec<f64> = ok.iter().map(|o| o.statistic).collect();
    let omegas: Vec<bool> = ok.iter().filter_map(|o| o.omega_n).collect();
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| [normal::quantile((i as f64 + 0.5) / nf), x])
        .collect();

    MethodSummary {
        method,
        count,
        failed_replicates: failed,
        mean,
        sd,
        skewness,
        median: (count > 0).then(|| quantile_sorted(&sorted, 0.5)),
        ks_distance: (count > 0).then(|| ks_distance_to_standard_normal(&sorted)),
        rejection_rate,
        mean_variance_estimate: (count > 0).then(|| mean_of(&mut ok.iter().map(|o| o.variance_estimate))),
        statistic_variance: sample_var(&raw),
        mean_n1: (count > 0).then(|| mean_of(&mut ok.iter().map(|o| o.n1 as f64))),
        omega_n_rate: (!omegas.is_empty())
            .then(|| omegas.iter().filter(|&&b| b).count() as f64 / omegas.len() as f64),
        histogram: freedman_diaconis(&sorted),
        qq,
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Cem => "cem",
        Method::Iptw => "iptw",
    }
}

impl ExperimentOutput {
    /// `replicate,method,statistic,omega_n,n1,raw_statistic,variance_estimate`;
    /// `statistic` is the standardized value.
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("replicate,method,statistic,omega_n,n1,raw_statistic,variance_estimate\n");
        for r in &self.replicates {
            for o in r.outcomes.iter().flatten() {
                let omega = match o.omega_n {
                    Some(true) => "1",
                    Some(false) => "0",
                    None => "",
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.replicate,
                    method_name(o.method),
                    o.standardized,
                    omega,
                    o.n1,
                    o.statistic,
                    o.variance_estimate
                )
                .unwrap();
            }
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }

    /// Writes `summary.json` and `samples.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.json"), self.summary_json() + "\n")?;
        fs::write(dir.join("samples.csv"), self.samples_csv())?;
        Ok(())
    }

    /// Standardized statistics of one method in replicate order.
    pub fn standardized(&self, method: Method) -> Vec<f64> {
        self.replicates
            .iter()
            .flat_map(|r| r.outcomes.iter().flatten())
            .filter(|o| o.method == method)
            .map(|o| o.standardized)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{AssignmentModel, Hypothesis};

    fn small_config(reps: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(Scenario::new(400, AssignmentModel::Model1, Hypothesis::Null, 7));
        c.replications = reps;
        c
    }

    #[test]
    fn bins_rule() {
        let rule = SchemeRule::default();
        assert_eq!(rule.bins_for(5000), 12);
        assert_eq!(rule.bins_for(2500), 10);
        assert_eq!(rule.bins_for(7500), 14);
        let doubled = SchemeRule { bins_multiplier: 2, ..SchemeRule::default() };
        assert_eq!(doubled.bins_for(5000), 24);
        assert_eq!(rule.scheme_for(5000).unwrap().cell_count(), 12 * 12 * 12 * 4);
    }

    #[test]
    fn config_validation() {
        let text = r#"{"scenario":{"n":100,"assignment_model":"model1","hypothesis":"null"},"replications":0}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))));
        let text = r#"{"scenario":{"n":100,"assignment_model":"model1","hypothesis":"null"},"alpha":1.5}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
        let text = r#"{"scenario":{"n":100,"assignment_model":"model1","hypothesis":"null"},"unknown":1}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
        let text = r#"{"scenario":{"n":100,"assignment_model":"model1","hypothesis":"null"},"scheme":{"theta":0}}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
        let text = r#"{"scenario":{"n":100,"assignment_model":"model1","hypothesis":"null"}}"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.replications, 300);
        assert_eq!(c.iptw_features, vec![0, 1]);
        assert_eq!(c.method, MethodChoice::Both);
    }

    #[test]
    fn fingerprint_ignores_execution_fields() {
        let a = small_config(3);
        let mut b = a.clone();
        b.threads = Some(8);
        b.output_dir = Some("/tmp/x".into());
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        c.scenario.seed = 8;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn single_replicate_marks_degenerate_fields() {
        let out = run_experiment(&small_config(1)).unwrap();
        let csv = out.samples_csv();
        assert_eq!(csv.lines().filter(|l| l.starts_with("0,cem")).count(), 1);
        let cem = out.summary.method(Method::Cem).unwrap();
        assert_eq!(cem.count, 1);
        assert!(cem.sd.is_none());
        assert!(cem.skewness.is_none());
        assert!(cem.histogram.is_none());
        let json: serde_json::Value = serde_json::from_str(&out.summary_json()).unwrap();
        assert!(json["methods"][0]["sd"].is_null());
    }

    #[test]
    fn determinism_across_threads() {
        let mut a = small_config(12);
        a.threads = Some(1);
        let mut b = a.clone();
        b.threads = Some(4);
        let (oa, ob) = (run_experiment(&a).unwrap(), run_experiment(&b).unwrap());
        assert_eq!(oa.samples_csv(), ob.samples_csv());
        assert_eq!(oa.summary_json(), ob.summary_json());
    }

    #[test]
    fn summary_helpers() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.25), 1.75);
        let h = freedman_diaconis(&s).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(*h.edges.first().unwrap(), 1.0);
        assert_eq!(*h.edges.last().unwrap(), 4.0);
        let flat = freedman_diaconis(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(flat.counts, vec![3]);
        assert!(ks_distance_to_standard_normal(&[0.0]) - 0.5 < 1e-15);
    }
}
