//! Coarsened-exact-matching weighted log-rank test for right-censored
//! two-arm survival data, with an inverse-propensity-weighted baseline and
//! a Monte-Carlo calibration harness.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

pub mod error;
pub mod experiment;
pub mod iptw;
pub mod matching;
pub mod normal;
pub mod oracle;
pub mod scalar;
pub mod simgen;
pub mod survival;
pub mod weighted_logrank;

pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutput, ExperimentSummary, MethodChoice, SchemeRule};
pub use iptw::{fit_logistic, iptw_logrank, iptw_weights, IptwWeights, LogisticModel, LogisticOptions};
pub use matching::{match_cohort, CoarseningScheme, MatchSummary, MatchedCohort, Placement, SchemeSpec, StratumId};
pub use scalar::{kahan_sum, pinv, KahanSum, Real};
pub use simgen::{generate, generate_replicate, AssignmentModel, HazardModel, Hypothesis, Scenario};
pub use survival::{read_cohort_csv, write_cohort_csv, Arm, Cohort, EventGrid, SubjectRecord};
pub use weighted_logrank::{run_test, statistic, variance_estimate, Direction, Method, TestResult, WeightFunction};

pub type SubjectRecordF64 = SubjectRecord<f64>;
pub type CohortF64 = Cohort<f64>;
pub type CohortF32 = Cohort<f32>;
pub type CoarseningSchemeF64 = CoarseningScheme<f64>;
pub type MatchedCohortF64 = MatchedCohort<f64>;
pub type MatchedCohortF32 = MatchedCohort<f32>;
pub type WeightFunctionF64 = WeightFunction<f64>;
pub type TestResultF64 = TestResult<f64>;
pub type TestResultF32 = TestResult<f32>;
pub type LogisticModelF64 = LogisticModel<f64>;
