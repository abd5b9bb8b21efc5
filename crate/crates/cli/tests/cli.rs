use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nsplearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsplearn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = nsplearn(&["generate", "--scenario", "toy_sinusoidal", "--seed", "11", "--out", path(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["train.txt", "test.txt", "train.txt.meta.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    nsplearn(&["generate", "--scenario", "toy_sinusoidal", "--seed", "12", "--out", path(&c)]);
    assert_ne!(fs::read(a.join("train.txt")).unwrap(), fs::read(c.join("train.txt")).unwrap());
}

#[test]
fn learn_then_evaluate_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    let report = dir.path().join("report");
    assert!(nsplearn(&["generate", "--scenario", "toy_limit_cycle", "--out", path(&data)]).status.success());
    let o = nsplearn(&["learn", "--data", path(&data.join("train.txt")), "--out", path(&model)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(model.join("model.txt").exists() && model.join("estimate.txt").exists());
    let o = nsplearn(&[
        "evaluate",
        "--data",
        path(&data.join("test.txt")),
        "--model",
        path(&model),
        "--out",
        path(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(report.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("scenario,method,trial,nnce,nppe,npoe"));
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&fields[..3], &["toy_limit_cycle", "fixed_rows", "0"]);
    let nppe: f64 = fields[4].parse().unwrap();
    assert!(nppe < 1e-2, "nppe {nppe}");
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let o = nsplearn(&["generate", "--scenario", "toy_spiral"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    for text in ["noise_fraction = 1.5\n", "n_points = many\n", "unknown_key = 1\n"] {
        fs::write(&cfg, text).unwrap();
        let o = nsplearn(&["generate", "--config", path(&cfg), "--out", path(dir.path())]);
        assert_eq!(o.status.code(), Some(2), "{text}");
    }
    let o = nsplearn(&["reproduce-table2", "--scenario", "toy_linear", "--method", "selection", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsplearn(&["learn", "--data", path(&dir.path().join("absent.txt")), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluation_without_ground_truth_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    nsplearn(&["generate", "--scenario", "toy_linear", "--out", path(&data)]);
    assert!(nsplearn(&["learn", "--data", path(&data.join("train.txt")), "--out", path(&model)]).status.success());

    let text = fs::read_to_string(data.join("test.txt")).unwrap();
    let mut stripped = String::from("dims x=2 u=2 gt=0\n");
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').take(4).collect();
        stripped.push_str(&fields.join(","));
        stripped.push('\n');
    }
    let blind = data.join("blind.txt");
    fs::write(&blind, stripped).unwrap();
    fs::copy(data.join("test.txt.meta.json"), data.join("blind.txt.meta.json")).unwrap();

    let o = nsplearn(&["evaluate", "--data", path(&blind), "--model", path(&model), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ground truth"));
}
