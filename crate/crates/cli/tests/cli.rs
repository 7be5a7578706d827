use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
[run]
hours = [3, 8]
levels = [0.8, 0.9]
windows = [90]
cal_fracs = [0.5]
methods = ["osscp", "agaci"]
test_start = "2017-02-01"
split_date = "2017-04-01"

[dataset.synthetic]
n_days = 500
hours = [3, 8]
hourly_levels = [30.0, 40.0]
seed = 3

[evaluation]
n_boot = 50

[gridsearch]
validation_start = "2016-11-01"
[gridsearch.grids.linear_qr]
lambda = [0.0, 1.0]
"#;

fn cepf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cepf")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn backtest_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let o = cepf(&["backtest", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 2 * 2 * 2);
    for f in ["predictions.csv", "weights.csv", "timings.csv", "run_summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let rep = dir.path().join("rep");
    let o = cepf(&[
        "report",
        "--results",
        out.join("results.csv").to_str().unwrap(),
        "--weights",
        out.join("weights.csv").to_str().unwrap(),
        "--format",
        "json",
        "--plot-data",
        "--out",
        rep.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(rep.join("results.json").exists());
    assert!(rep.join("plot_weight_paths.csv").exists());
}

#[test]
fn overrides_shrink_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let o = cepf(&[
        "backtest", "--config", &cfg, "--out", out.to_str().unwrap(), "--hours", "8", "--levels", "0.9", "--seed", "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 2);
}

#[test]
fn config_error_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("levels = [0.8, 0.9]", "levels = [1.5]"));
    let o = cepf(&["backtest", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let o = cepf(&["backtest", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cell_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("windows = [90]", "windows = [90, 600]"));
    let out = dir.path().join("out");
    let o = cepf(&["backtest", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cell failed"));
    assert!(out.join("results.csv").exists());
}

#[test]
fn gridsearch_and_synth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let o = cepf(&["gridsearch", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sel: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("selection.json")).unwrap()).unwrap();
    let m = &sel["models"]["linear_qr"];
    let scores: Vec<f64> = m["candidates"].as_array().unwrap().iter().map(|c| c["score"].as_f64().unwrap()).collect();
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(scores[m["selected"].as_u64().unwrap() as usize], best);

    let o = cepf(&["synth", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let panel = fs::read_to_string(out.join("panel.csv")).unwrap();
    assert_eq!(panel.lines().count(), 1 + 500 * 2);

    // the synthesized file feeds a CSV-driven backtest
    let csv_cfg = CONFIG.replace("[dataset.synthetic]", "[data]\ncsv = \"out/panel.csv\"\n\n[dataset.synthetic]");
    let cfg = write_config(dir.path(), &csv_cfg);
    let out2 = dir.path().join("out2");
    let o = cepf(&["backtest", "--config", &cfg, "--out", out2.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_example_config_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let example = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml");
    let o = cepf(&["synth", "--config", example.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let panel = fs::read_to_string(dir.path().join("panel.csv")).unwrap();
    assert_eq!(panel.lines().count(), 1 + 2190 * 5);
}
