use std::fs;
use std::path::Path;
use std::process::Command;

use bnn_hmc::harness::{chain_cells, run_grid, ExperimentKind, ExperimentManifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bnn-hmc"))
}

fn write_manifest(dir: &Path, json: &str) -> std::path::PathBuf {
    let path = dir.join("manifest.json");
    fs::write(&path, json).unwrap();
    path
}

const TINY_GRID: &str = r#"{
    "kind": "grid",
    "activations": ["sigmoid", "relu"],
    "epsilons": [0.001, 0.002],
    "steps": [20],
    "architectures": [[5]],
    "n_samples": 8,
    "burn_in": 2,
    "repeats": 2,
    "n_data": 10,
    "n_test": 5,
    "seed": 3,
    "output": "tiny.csv"
}"#;

#[test]
fn grid_csv_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_manifest(tmp.path(), TINY_GRID);
    let mut outputs = Vec::new();
    for (k, workers) in ["1", "2"].iter().enumerate() {
        let out = tmp.path().join(format!("run{k}"));
        let status = bin()
            .args(["run-grid", "--manifest"])
            .arg(&manifest)
            .arg("--out-dir")
            .arg(&out)
            .args(["--workers", workers])
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(fs::read(out.join("tiny.csv")).unwrap());
        assert!(out.join("tiny.summary.json").exists());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.remove(0)).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "cell,repeat,seed,activation,hidden,d,epsilon,n_steps,travel_time,acceptance_rate,n_divergent,mean_abs_delta_h,test_mse,efficiency,status"
    );
    assert_eq!(lines.count(), 2 * 2 * 2);
}

#[test]
fn row_seeds_are_recomputable_from_the_manifest() {
    let m = ExperimentManifest::from_json(TINY_GRID).unwrap();
    let out = run_grid(&m).unwrap();
    assert_eq!(out.rows.len(), chain_cells(&m).len() * 2);
    for r in &out.rows {
        assert_eq!(r.seed, m.cell_seed(r.cell, r.repeat));
        assert!(r.is_ok());
        assert_eq!(r.d, 16);
        let a = r.acceptance_rate.unwrap();
        assert!((r.efficiency.unwrap() - a * r.epsilon).abs() < 1e-15);
    }
}

#[test]
fn generate_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("d{k}"));
        let ok = bin()
            .args(["generate-data", "--n", "25", "--seed", "9", "--out-dir"])
            .arg(&out)
            .status()
            .unwrap()
            .success();
        assert!(ok);
        files.push(fs::read_to_string(out.join("synthetic.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert!(files[0].starts_with("x0,y0\n"));
    assert_eq!(files[0].lines().count(), 26);
}

#[test]
fn bad_manifests_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let wrong_kind = write_manifest(tmp.path(), r#"{"kind": "tuning-curves"}"#);
    let out = bin()
        .args(["run-grid", "--manifest"])
        .arg(&wrong_kind)
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tuning-curves"));

    let unknown = write_manifest(tmp.path(), r#"{"kind": "grid", "epsilonz": [0.1]}"#);
    let code = bin()
        .args(["run-grid", "--manifest"])
        .arg(&unknown)
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .unwrap()
        .status
        .code();
    assert_eq!(code, Some(2));
}

#[test]
fn failed_cells_are_rows_and_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    // a zero subderivative outside {0, 1, leaky slope} is rejected per cell
    let manifest = write_manifest(
        tmp.path(),
        r#"{"kind": "grid", "activations": ["relu"], "epsilons": [0.001], "steps": [5],
            "architectures": [[3]], "n_samples": 2, "burn_in": 0, "repeats": 1, "n_data": 4,
            "zero_subderivative": 0.5}"#,
    );
    let out = bin()
        .args(["run-grid", "--manifest"])
        .arg(&manifest)
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("grid.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(!row.ends_with(",ok"));
}

#[test]
fn proxy_subcommands_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let ok = bin().args(args).arg("--out-dir").arg(tmp.path()).status().unwrap().success();
        assert!(ok, "{args:?}");
    };
    run(&["tuning-curves"]);
    let curves = fs::read_to_string(tmp.path().join("tuning-curves.csv")).unwrap();
    assert!(curves.starts_with("order,sigma,l,a,efficiency\n"));
    let optima: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("tuning-curves.summary.json")).unwrap()).unwrap();
    let a: Vec<f64> = optima.as_array().unwrap().iter().map(|o| o["a_opt"].as_f64().unwrap()).collect();
    assert!(a.iter().any(|v| (v - 0.651).abs() < 1e-3));
    assert!(a.iter().any(|v| (v - 0.45).abs() < 1e-2));

    let manifest = write_manifest(tmp.path(), r#"{"kind": "crossing-stats", "n_samples": 2000}"#);
    run(&["crossing-stats", "--manifest", manifest.to_str().unwrap()]);
    let table = fs::read_to_string(tmp.path().join("crossing-stats.csv")).unwrap();
    assert_eq!(table.lines().count(), 12);

    let manifest = write_manifest(
        tmp.path(),
        r#"{"kind": "error-order", "activations": ["relu"], "repeats": 2}"#,
    );
    run(&["error-order", "--manifest", manifest.to_str().unwrap()]);
    let fits = fs::read_to_string(tmp.path().join("error-order.fits.csv")).unwrap();
    assert!(fits.lines().any(|l| l.contains("local_residual")));
}

#[test]
fn dim_sweep_counts_parameters() {
    let m = ExperimentManifest::new(ExperimentKind::DimSweep);
    let cells = chain_cells(&m);
    let dims: Vec<usize> = cells
        .iter()
        .filter(|c| c.activation == bnn_hmc::bnn::Activation::Sigmoid)
        .map(|c| bnn_hmc::bnn::MlpArchitecture::with_hidden(1, &c.hidden, 1, c.activation).unwrap().param_dim())
        .collect();
    assert!(dims.contains(&151));
    assert!(dims.contains(&481));
}
