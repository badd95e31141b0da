mod common;

use cem_logrank::oracle::{
    decomposition, kaplan_meier, martingale_residual_mean, two_sample_bracket,
};
use cem_logrank::weighted_logrank::unnormalized_bracket;
use cem_logrank::{generate, statistic, AssignmentModel, Arm, Hypothesis, Scenario, WeightFunction};

#[test]
fn single_cell_bracket_matches_two_sample_computation() {
    let mut rng = common::rng(11);
    for size in (6..=12).cycle().take(200) {
        let mc = common::single_cell_instance(&mut rng, size);
        let ours = unnormalized_bracket(&mc);
        let oracle = two_sample_bracket(mc.cohort());
        assert!((ours - oracle).abs() <= 1e-12, "{ours} vs {oracle}");
    }
}

#[test]
fn decomposition_matches_statistic() {
    let mut rng = common::rng(12);
    let hazards = [common::alternative_hazard(), cem_logrank::HazardModel { treatment_log_hazard: 0.0, ..common::alternative_hazard() }];
    for trial in 0..20 {
        let mc = common::simulated_small(&mut rng, 40 + trial, &hazards[trial % 2]);
        let w = if trial % 3 == 0 {
            WeightFunction::default()
        } else {
            common::random_weight_function(&mut rng, 10.0)
        };
        let d = decomposition(&mc, &hazards[trial % 2], &w);
        let stat = statistic(&mc, &w);
        assert!((d.total() - stat).abs() <= 1e-10, "trial {trial}: {} vs {stat}", d.total());
        if mc.n1() > 0 {
            assert!(d.drift[1] != 0.0);
        }
    }
}

#[test]
fn martingale_residuals_center_on_zero() {
    let sc = Scenario::new(1000, AssignmentModel::Model1, Hypothesis::Alternative, 5);
    let check = martingale_residual_mean(&sc, 100).unwrap();
    assert_eq!(check.draws, 100_000);
    assert!(check.mean.abs() <= 3.0 * check.std_error, "{check:?}");
    // Var(M_τ) = E[A_τ]
    assert!(
        (check.variance - (check.mean * check.mean) - check.mean_compensator).abs()
            <= 4.0 * check.variance_gap_std_error + 1e-3,
        "{check:?}"
    );
}

#[test]
fn kaplan_meier_tracks_true_survival() {
    // without covariate effects the control survival is exactly exp(−h₀ t)
    let mut sc = Scenario::new(20_000, AssignmentModel::Model1, Hypothesis::Null, 9);
    sc.covariate_log_hazard = 0.0;
    let cohort = generate::<f64>(&sc).unwrap();
    let controls: Vec<_> = cohort.subjects().iter().filter(|s| s.arm == Arm::Control).collect();
    let times: Vec<f64> = controls.iter().map(|s| s.observed_time).collect();
    let events: Vec<bool> = controls.iter().map(|s| s.event).collect();
    let km = kaplan_meier(&times, &events);
    let h0 = sc.baseline_log_hazard.exp();
    for target in [1.0, 2.5, 5.0, 7.5] {
        let &(_, s, se) = km.iter().take_while(|(t, _, _)| *t <= target).last().unwrap();
        let truth = (-h0 * target).exp();
        assert!((s - truth).abs() <= 2.576 * se + 2e-3, "t={target}: {s} vs {truth} (se {se})");
    }
}
