use nalgebra::DMatrix;

use nullspace_core::evaluation::evaluate;
use nullspace_core::experiment::{generate_data, learn, reproduce_table1, ExperimentConfig, Method, Scenario};
use nullspace_core::io;

fn row_space_projector(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let q = rows.transpose().qr().q();
    let q = q.columns(0, rows.nrows());
    q * q.transpose()
}

#[test]
fn toy_pipeline_survives_files() {
    let cfg = ExperimentConfig::for_scenario(Scenario::ToyLimitCycle);
    let (train, test) = generate_data(&cfg, 21).unwrap();
    let learnt = learn(&cfg, &train, &[Method::FixedRows], 21).unwrap();
    let model = learnt.model.unwrap();
    let estimate = &learnt.fits[0].1.estimate;
    assert_eq!(estimate.n_rows(), 1);
    let report = evaluate(estimate, Some(&model), &test).unwrap();
    assert!(report.nppe < 1e-2 && report.npoe < 1e-2, "{report:?}");

    let dir = tempfile::tempdir().unwrap();
    io::write_dataset(&test, &dir.path().join("test.txt")).unwrap();
    io::write_model(&model, &dir.path().join("model.txt")).unwrap();
    io::write_estimate(estimate, &dir.path().join("estimate.txt")).unwrap();
    let again = evaluate(
        &io::read_estimate(&dir.path().join("estimate.txt")).unwrap(),
        Some(&io::read_model(&dir.path().join("model.txt")).unwrap()),
        &io::read_dataset(&dir.path().join("test.txt")).unwrap(),
    )
    .unwrap();
    assert_eq!(again, report);
}

#[test]
fn arm_selection_is_recovered_up_to_row_mixing() {
    let cfg = ExperimentConfig {
        n_traj: 20,
        n_test_traj: 4,
        phi: Some(60),
        ..ExperimentConfig::for_scenario(Scenario::ArmXz)
    };
    let (train, test) = generate_data(&cfg, 2).unwrap();
    let learnt = learn(&cfg, &train, &[Method::Selection], 2).unwrap();
    let estimate = &learnt.fits[0].1.estimate;
    let lambda = estimate.selection_matrix().expect("a two-row selection");
    assert_eq!(lambda.n_rows(), 2);
    let truth = Scenario::ArmXz.selection().unwrap();
    let gap = (row_space_projector(lambda.matrix()) - row_space_projector(truth.matrix())).amax();
    assert!(gap < 1e-3, "row-space gap {gap}");
    let report = evaluate(estimate, learnt.model.as_ref(), &test).unwrap();
    assert!(report.nppe < 1e-2, "{report:?}");
}

#[test]
fn table1_lists_every_toy_policy() {
    let cfg = ExperimentConfig {
        n_trials: 2,
        ..ExperimentConfig::default()
    };
    let table = reproduce_table1(&cfg).unwrap();
    let csv = table.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "policy,nnce,nppe,npoe");
    assert_eq!(lines.len(), 4);
    for (line, name) in lines[1..].iter().zip(["linear", "limit_cycle", "sinusoidal"]) {
        assert!(line.contains(name), "{line}");
        assert_eq!(line.matches('±').count(), 3, "{line}");
    }
    assert_eq!(table.trials_csv().lines().count(), 1 + 3 * 2);
}
