use std::fs;

use cem_logrank::experiment::run_experiment;
use cem_logrank::{
    generate, read_cohort_csv, write_cohort_csv, AssignmentModel, Cohort, ExperimentConfig, Hypothesis, Scenario,
};

#[test]
fn generated_cohort_round_trips_through_csv() {
    let sc = Scenario::new(200, AssignmentModel::Model2, Hypothesis::Alternative, 41);
    let cohort = generate::<f64>(&sc).unwrap();
    let mut buf = Vec::new();
    write_cohort_csv(&cohort, &mut buf).unwrap();
    let back: Cohort<f64> = read_cohort_csv(buf.as_slice(), 3, Some(10.0)).unwrap();
    assert_eq!(back.subjects(), cohort.subjects());
    assert_eq!(back.horizon(), cohort.horizon());
}

#[test]
fn experiment_writes_reproducible_files() {
    let mut config = ExperimentConfig::new(Scenario::new(300, AssignmentModel::Model1, Hypothesis::Null, 42));
    config.replications = 5;
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&config).unwrap();
    out.write_to(dir.path()).unwrap();
    let samples = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 2 * 5);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["fingerprint"], config.fingerprint());
    assert_eq!(summary["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(summary["methods"].as_array().unwrap().len(), 2);

    let again = run_experiment(&config).unwrap();
    assert_eq!(again.samples_csv(), samples);
}
