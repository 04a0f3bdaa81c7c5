use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmps_core::io::CurveTable;
use cmps_core::trajectory::SpikeTrain;
use serde_json::Value;

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn cmps(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmps"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = cmps(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn model(name: &str) -> String {
    models().join(name).to_str().unwrap().to_string()
}

const SMALL_FORWARD: [&str; 10] = [
    "--c2-points",
    "200",
    "--c3-points",
    "24",
    "--counting-points",
    "200",
    "--wtd-points",
    "50",
    "--noise-points",
    "20",
];

#[test]
fn forward_qd_c2_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let qd = model("qd.toml");
    let mut args = vec!["forward", "--model", &qd];
    args.extend(SMALL_FORWARD);
    ok(dir.path(), &args);

    let gl = 3.6373066958946425_f64.powi(2);
    let gr = 2.1931712199461306_f64.powi(2);
    let current = gl * gr / (gl + gr);
    let scalars = json(&dir.path().join("scalars.json"));
    assert!((scalars["current_khz"].as_f64().unwrap() - current).abs() < 1e-12 * current);

    for name in ["c2.csv", "c2.json"] {
        let table = CurveTable::read(&dir.path().join(name)).unwrap();
        assert_eq!(table.rows.len(), 200);
        for row in &table.rows {
            let exact = current * current * (1.0 - (-(gl + gr) * row[0]).exp());
            assert!((row[1] - exact).abs() <= 1e-10 * current * current, "{name} at {}", row[0]);
        }
    }
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "forward");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 13);
}

#[test]
fn forward_rejects_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmps(dir.path(), &["forward", "--model", &model("qd.toml"), "--c2-points", "0"]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("c2.csv").exists());
}

#[test]
fn missing_and_malformed_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let o = cmps(dir.path(), &["qd-pipeline", "--train", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.txt"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "# normalization=raw,order=2\ntau_ms,value\n0.0,1.0\n0.1,oops\n").unwrap();
    let bad = bad.to_str().unwrap();
    let o = cmps(dir.path(), &["reconstruct", "--route", "correlation", "--d", "2", "--c2", bad, "--c3", bad]);
    assert_eq!(code(&o), 2);

    let o = cmps(dir.path(), &["simulate", "--model", &model("qd.toml"), "--duration", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn forward_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = model("generic_d2.toml");
    let mut args = vec!["forward", "--model", &m];
    args.extend(SMALL_FORWARD);
    ok(a.path(), &args);
    ok(b.path(), &args);
    for name in ["c2.csv", "c3.json", "p0.csv", "p1.json", "wtd.csv", "noise.csv", "scalars.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let qd = model("qd.toml");
    let args = ["simulate", "--model", &qd, "--duration", "500", "--seed", "11", "--trajectories", "3"];
    ok(a.path(), &args);
    let mut threaded = vec!["--threads", "2"];
    threaded.extend(args);
    ok(b.path(), &threaded);
    for i in 0..3 {
        let name = format!("train_t{i}_ch2.txt");
        assert_eq!(
            std::fs::read(a.path().join(&name)).unwrap(),
            std::fs::read(b.path().join(&name)).unwrap(),
            "{name}"
        );
    }
    let train = SpikeTrain::read(&a.path().join("train_t0_ch2.txt")).unwrap();
    assert_eq!(train.seed, 11);
    assert_eq!(train.channel, 2);
    assert!(!train.clicks.is_empty());

    ok(c.path(), &["simulate", "--model", &qd, "--duration", "500", "--seed", "12"]);
    assert_ne!(
        std::fs::read(a.path().join("train_t0_ch2.txt")).unwrap(),
        std::fs::read(c.path().join("train_ch2.txt")).unwrap()
    );
}

fn max_reference_distance(dir: &Path) -> f64 {
    let cmp = json(&dir.join("comparison.json"));
    cmp["reference"]["distances"]
        .as_object()
        .expect("reference distances")
        .values()
        .map(|v| v.as_f64().unwrap())
        .fold(0.0, f64::max)
}

#[test]
fn reconstruct_round_trips_on_generic_model() {
    let data = tempfile::tempdir().unwrap();
    let m = model("generic_d2.toml");
    let mut args = vec!["forward", "--model", &m];
    args.extend(SMALL_FORWARD);
    ok(data.path(), &args);
    let file = |n: &str| data.path().join(n).to_str().unwrap().to_string();

    let rec = tempfile::tempdir().unwrap();
    let (c2, c3) = (file("c2.csv"), file("c3.json"));
    ok(
        rec.path(),
        &["reconstruct", "--route", "correlation", "--d", "2", "--c2", &c2, "--c3", &c3, "--reference", &m],
    );
    assert!(max_reference_distance(rec.path()) < 1e-6);

    let rec = tempfile::tempdir().unwrap();
    let (p0, p1) = (file("p0.csv"), file("p1.csv"));
    ok(rec.path(), &["reconstruct", "--route", "counting", "--d", "2", "--p0", &p0, "--p1", &p1, "--reference", &m]);
    assert!(max_reference_distance(rec.path()) < 1e-6);

    // the reconstructed model loads back and compares equal to the original
    let toml = rec.path().join("reconstructed_model.toml");
    let cmp = tempfile::tempdir().unwrap();
    ok(cmp.path(), &["compare", "--a", &m, "--b", toml.to_str().unwrap()]);
    let report = json(&cmp.path().join("comparison.json"));
    for v in report["distances"].as_object().unwrap().values() {
        assert!(v.as_f64().unwrap() < 1e-6);
    }
}

#[test]
fn reconstruct_rejects_data_from_the_other_route() {
    let data = tempfile::tempdir().unwrap();
    let m = model("generic_d2.toml");
    let mut args = vec!["forward", "--model", &m];
    args.extend(SMALL_FORWARD);
    ok(data.path(), &args);
    let file = |n: &str| data.path().join(n).to_str().unwrap().to_string();
    let (c2, c3) = (file("c2.csv"), file("c3.csv"));
    let out = tempfile::tempdir().unwrap();
    let o = cmps(out.path(), &["reconstruct", "--route", "counting", "--d", "2", "--p0", &c2, "--p1", &c3]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("not counting data"));
}

#[test]
fn qd_pipeline_recovers_rates_from_simulated_train() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--model", &model("qd.toml"), "--duration", "20000", "--seed", "5"]);
    let train = dir.path().join("train_ch2.txt");
    ok(dir.path(), &["qd-pipeline", "--train", train.to_str().unwrap()]);
    let report = json(&dir.path().join("qd_report.json"));
    let gl = report["params"]["gamma_l"].as_f64().unwrap();
    let gr = report["params"]["gamma_r"].as_f64().unwrap();
    assert!((gl / 3.6373066958946425_f64.powi(2) - 1.0).abs() < 0.05, "gamma_l {gl}");
    assert!((gr / 2.1931712199461306_f64.powi(2) - 1.0).abs() < 0.05, "gamma_r {gr}");
    assert!(report["ks_pvalue"].as_f64().unwrap() > 0.01);
    assert_eq!(report["matches"], true);
    let wtd = CurveTable::read(&dir.path().join("wtd_reconstructed.csv")).unwrap();
    assert_eq!(wtd.columns.len(), 3);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[simulate]\nduration = 200.0\nseed = 9\n").unwrap();
    let qd = model("qd.toml");
    let cfg_arg = cfg.to_str().unwrap();
    ok(dir.path(), &["--config", cfg_arg, "simulate", "--model", &qd, "--duration", "5"]);
    let train = SpikeTrain::read(&dir.path().join("train_ch2.txt")).unwrap();
    assert_eq!(train.duration, 200.0);
    assert_eq!(train.seed, 9);
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["config"]["duration"], 200.0);

    std::fs::write(&cfg, "[simulate]\nduraton = 200.0\n").unwrap();
    let o = cmps(dir.path(), &["--config", cfg_arg, "simulate", "--model", &qd, "--duration", "5"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("duraton"));
}

#[test]
fn estimate_outputs_load_back() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--model", &model("qd.toml"), "--duration", "2000", "--seed", "2"]);
    let train = dir.path().join("train_ch2.txt");
    ok(dir.path(), &["estimate", "--train", train.to_str().unwrap(), "--counting-points", "20"]);
    let c2 = cmps_core::io::correlation_from_table(&CurveTable::read(&dir.path().join("c2_est.json")).unwrap()).unwrap();
    assert_eq!(c2.order, 2);
    let p0 = cmps_core::io::counting_from_table(&CurveTable::read(&dir.path().join("p0_est.csv")).unwrap()).unwrap();
    assert_eq!(p0.grid.len(), 20);
    assert!(p0.values.iter().all(|&p| (0.0..=1.0).contains(&p)));
}
