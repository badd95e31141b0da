//! Random instance generators shared by the integration and acceptance tests.
#![allow(dead_code)]

use cem_logrank::simgen::{draw_covariates, draw_survival};
use cem_logrank::{match_cohort, Arm, CoarseningScheme, Cohort, HazardModel, MatchedCohort, SubjectRecord, WeightFunction};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn record(k: usize, x: Vec<f64>, arm: Arm, t: f64, event: bool) -> SubjectRecord<f64> {
    SubjectRecord::new(format!("s{k}"), x, arm, t, event).unwrap()
}

fn random_arm(rng: &mut ChaCha20Rng) -> Arm {
    if rng.random_bool(0.5) {
        Arm::Treated
    } else {
        Arm::Control
    }
}

/// One-cell cohort of `size ≥ 3` subjects on a coarse time lattice (so ties
/// occur), padded with a treated and a control censored past every event so
/// both arms stay at risk throughout.
pub fn single_cell_instance(rng: &mut ChaCha20Rng, size: usize) -> MatchedCohort<f64> {
    let mut subjects = Vec::new();
    for k in 0..size - 2 {
        let t = rng.random_range(1..=12) as f64 * 0.5;
        subjects.push(record(k, vec![0.5], random_arm(rng), t, rng.random_bool(0.7)));
    }
    subjects.push(record(size - 2, vec![0.5], Arm::Treated, 7.0, false));
    subjects.push(record(size - 1, vec![0.5], Arm::Control, 7.0, false));
    let cohort = Cohort::new(subjects, 8.0).unwrap();
    let scheme = CoarseningScheme::grid(&[0.0], &[1.0], 1, 0).unwrap();
    match_cohort(&cohort, &scheme).unwrap()
}

/// Small two-dimensional cohort (one continuous, one binary covariate) over
/// four cells with horizon 5; some subjects survive past the horizon.
pub fn small_cohort(rng: &mut ChaCha20Rng) -> MatchedCohort<f64> {
    let n = rng.random_range(4..=20);
    let subjects = (0..n)
        .map(|k| {
            let x = vec![rng.random_range(0.01..1.0), if rng.random_bool(0.5) { 1.0 } else { 0.0 }];
            let (t, event) = if rng.random_bool(0.35) {
                (rng.random_range(5.0..7.0), false)
            } else {
                (rng.random_range(1..=10) as f64 * 0.5, rng.random_bool(0.7))
            };
            record(k, x, random_arm(rng), t, event)
        })
        .collect();
    let cohort = Cohort::new(subjects, 5.0).unwrap();
    let scheme = CoarseningScheme::grid(&[0.0], &[1.0], 2, 1).unwrap();
    match_cohort(&cohort, &scheme).unwrap()
}

/// Positive step function with up to three breakpoints in `(0, τ)`.
pub fn random_weight_function(rng: &mut ChaCha20Rng, tau: f64) -> WeightFunction<f64> {
    let k = rng.random_range(0..=3);
    let mut breakpoints: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..tau)).collect();
    breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breakpoints.dedup();
    let values = (0..=breakpoints.len()).map(|_| rng.random_range(0.2..3.0)).collect();
    WeightFunction::new(breakpoints, values).unwrap()
}

/// Cohort drawn from a known hazard with balanced random arms, matched on a
/// coarse grid so cells hold several subjects of each arm.
pub fn simulated_small(rng: &mut ChaCha20Rng, n: usize, hazard: &HazardModel) -> MatchedCohort<f64> {
    let xs = draw_covariates(rng, n);
    let subjects = xs
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let arm = random_arm(rng);
            let t = draw_survival(rng, x, arm, hazard);
            let u = rng.random_range(0.0..10.0);
            let (t, event) = if t <= u { (t, true) } else { (u, false) };
            record(k, x.to_vec(), arm, t, event)
        })
        .collect();
    let cohort = Cohort::new(subjects, 10.0).unwrap();
    let scheme = CoarseningScheme::grid(&[-5.0; 3], &[5.0; 3], 2, 2).unwrap();
    match_cohort(&cohort, &scheme).unwrap()
}

pub fn alternative_hazard() -> HazardModel {
    HazardModel {
        baseline_hazard: (-2.0f64).exp(),
        treatment_log_hazard: -0.4,
        covariate_log_hazard: 0.25,
    }
}
