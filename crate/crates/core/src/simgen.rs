//! Synthetic cohorts: Gaussian/Bernoulli covariates, logistic treatment
//! assignment, constant-baseline Cox hazards and uniform censoring.
//!
//! Replicate `r` of a scenario with seed `s` always draws from ChaCha20
//! stream `r` keyed by `s`, so replicates can be generated in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::survival::{Arm, Cohort, SubjectRecord};

/// `x₁, x₂, x₃ ~ N(0,1)`.
pub const CONTINUOUS_DIMS: usize = 3;
/// `x₄, x₅ ~ Bernoulli(1/2)`.
pub const BINARY_DIMS: usize = 2;
pub const COVARIATE_DIMS: usize = CONTINUOUS_DIMS + BINARY_DIMS;

pub type Covariates = [f64; COVARIATE_DIMS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentModel {
    /// `logit P(Z=1|x) = −3.4 − 0.2 Σx`.
    Model1,
    /// `logit P(Z=1|x) = −3.7 − 0.2 Σx + 0.5 (x₁x₂ + x₁x₃)`.
    Model2,
}

impl AssignmentModel {
    pub fn logit(self, x: &Covariates) -> f64 {
        let sum: f64 = x.iter().sum();
        match self {
            AssignmentModel::Model1 => -3.4 - 0.2 * sum,
            AssignmentModel::Model2 => -3.7 - 0.2 * sum + 0.5 * (x[0] * x[1] + x[0] * x[2]),
        }
    }

    pub fn probability(self, x: &Covariates) -> f64 {
        let eta = self.logit(x);
        1.0 / (1.0 + (-eta).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Null,
    Alternative,
}

fn default_treatment_log_hazard() -> f64 {
    -0.4
}
fn default_covariate_log_hazard() -> f64 {
    0.25
}
fn default_baseline_log_hazard() -> f64 {
    -2.0
}
fn default_ten() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub assignment_model: AssignmentModel,
    pub hypothesis: Hypothesis,
    #[serde(default = "default_treatment_log_hazard")]
    pub treatment_log_hazard: f64,
    #[serde(default = "default_covariate_log_hazard")]
    pub covariate_log_hazard: f64,
    #[serde(default = "default_baseline_log_hazard")]
    pub baseline_log_hazard: f64,
    #[serde(default = "default_ten")]
    pub censor_upper: f64,
    #[serde(default = "default_ten")]
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    /// Default parameters for the given size, models and seed.
    pub fn new(n: usize, assignment_model: AssignmentModel, hypothesis: Hypothesis, seed: u64) -> Self {
        Self {
            n,
            assignment_model,
            hypothesis,
            treatment_log_hazard: default_treatment_log_hazard(),
            covariate_log_hazard: default_covariate_log_hazard(),
            baseline_log_hazard: default_baseline_log_hazard(),
            censor_upper: 10.0,
            horizon: 10.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("scenario n must be at least 2, got {}", self.n)));
        }
        if !(self.censor_upper > 0.0) || !self.censor_upper.is_finite() {
            return Err(Error::Config("censor_upper must be positive and finite".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config("horizon must be positive and finite".into()));
        }
        for (name, v) in [
            ("treatment_log_hazard", self.treatment_log_hazard),
            ("covariate_log_hazard", self.covariate_log_hazard),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        // −∞ is allowed and means h₀ = 0
        if self.baseline_log_hazard.is_nan() || self.baseline_log_hazard == f64::INFINITY {
            return Err(Error::Config("baseline_log_hazard must be finite or −inf".into()));
        }
        Ok(())
    }

    pub fn hazard(&self) -> HazardModel {
        HazardModel {
            baseline_hazard: self.baseline_log_hazard.exp(),
            treatment_log_hazard: match self.hypothesis {
                Hypothesis::Null => 0.0,
                Hypothesis::Alternative => self.treatment_log_hazard,
            },
            covariate_log_hazard: self.covariate_log_hazard,
        }
    }

    /// Independent stream for replicate `r`.
    pub fn rng(&self, replicate: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(replicate);
        rng
    }
}

/// `Λ(t|x,z) = t · h₀ · exp(γ_x Σx) · exp(γ_z z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardModel {
    pub baseline_hazard: f64,
    /// `γ_z`; zero under the null.
    pub treatment_log_hazard: f64,
    /// `γ_x`, applied to the sum of all covariates.
    pub covariate_log_hazard: f64,
}

impl HazardModel {
    /// Constant hazard rate (the density `p(s|x,z)` of `Λ`).
    pub fn rate<T: Real>(&self, x: &[T], arm: Arm) -> f64 {
        let sum: f64 = x.iter().map(|v| v.as_f64()).sum();
        let arm_factor = match arm {
            Arm::Treated => self.treatment_log_hazard.exp(),
            Arm::Control => 1.0,
        };
        self.baseline_hazard * (self.covariate_log_hazard * sum).exp() * arm_factor
    }

    pub fn cumulative<T: Real>(&self, t: T, x: &[T], arm: Arm) -> T {
        t * T::of(self.rate(x, arm))
    }
}

pub fn draw_covariates<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Covariates> {
    (0..n)
        .map(|_| {
            let mut x = [0.0; COVARIATE_DIMS];
            for v in x.iter_mut().take(CONTINUOUS_DIMS) {
                *v = rng.sample(StandardNormal);
            }
            for v in x.iter_mut().skip(CONTINUOUS_DIMS) {
                *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            }
            x
        })
        .collect()
}

pub fn assign_treatment<R: Rng + ?Sized>(
    rng: &mut R,
    covariates: &[Covariates],
    model: AssignmentModel,
) -> Vec<Arm> {
    covariates
        .iter()
        .map(|x| {
            let u: f64 = rng.random();
            if u < model.probability(x) {
                Arm::Treated
            } else {
                Arm::Control
            }
        })
        .collect()
}

/// Inverse-transform draw `E / rate` with `E ~ Exp(1)`; infinite when the rate is 0.
pub fn draw_survival<R: Rng + ?Sized>(rng: &mut R, x: &Covariates, arm: Arm, hazard: &HazardModel) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / hazard.rate(x.as_slice(), arm)
}

/// Replicate 0 of the scenario.
pub fn generate<T: Real>(scenario: &Scenario) -> Result<Cohort<T>> {
    generate_replicate(scenario, 0)
}

pub fn generate_replicate<T: Real>(scenario: &Scenario, replicate: u64) -> Result<Cohort<T>> {
    scenario.validate()?;
    let mut rng = scenario.rng(replicate);
    let hazard = scenario.hazard();
    let xs = draw_covariates(&mut rng, scenario.n);
    let arms = assign_treatment(&mut rng, &xs, scenario.assignment_model);
    let subjects = xs
        .iter()
        .zip(&arms)
        .enumerate()
        .map(|(k, (x, &arm))| {
            // both potential outcomes are drawn; only the realised arm's is kept
            let t0 = draw_survival(&mut rng, x, Arm::Control, &hazard);
            let t1 = draw_survival(&mut rng, x, Arm::Treated, &hazard);
            let u: f64 = rng.random::<f64>() * scenario.censor_upper;
            let t = match arm {
                Arm::Treated => t1,
                Arm::Control => t0,
            };
            let (observed, event) = if t <= u { (t, true) } else { (u, false) };
            SubjectRecord::new(
                format!("{k}"),
                x.iter().map(|&v| T::of(v)).collect(),
                arm,
                T::of(observed),
                event,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(subjects, T::of(scenario.horizon))
}
