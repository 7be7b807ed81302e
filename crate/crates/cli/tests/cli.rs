use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn adfilter(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adfilter"))
        .args(args)
        .current_dir(dir)
        .env_remove("ADFILTER_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_L96: &[&str] =
    &["--system", "l96", "--dim", "12", "--T", "30", "--n-train", "1", "--n-val", "1", "--n-test", "1"];

#[test]
fn generate_writes_the_default_split_and_is_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["generate", "--system", "cw", "--T", "800", "--seed", "7", "--output-dir", "a"];
    ok(&adfilter(&args, tmp.path()));
    let data = tmp.path().join("a/data");
    let meta = json(&data.join("meta.json"));
    assert_eq!(meta["trajectories"].as_array().unwrap().len(), 16);
    let mut files: Vec<_> = fs::read_dir(&data).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files.len(), 33);
    let before: Vec<Vec<u8>> = files.iter().map(|f| fs::read(data.join(f)).unwrap()).collect();
    ok(&adfilter(&args, tmp.path()));
    for (f, x) in files.iter().zip(before) {
        assert!(fs::read(data.join(f)).unwrap() == x, "{f:?} changed on regeneration");
    }
}

#[test]
fn invalid_configs_exit_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = adfilter(&["generate", "--system", "glv", "--ratio", "0"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = adfilter(&["generate", "--system", "glv", "--method", "ad3dvar-k"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("method") && err.contains("obs_mode"), "{err}");
    fs::write(tmp.path().join("bad.json"), "{\"system\": \"cw\",\n \"epochs\": \"many\"}").unwrap();
    let out = adfilter(&["generate", "--config", "bad.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(adfilter(&["train", "--output-dir", "nowhere"], tmp.path()).status.code(), Some(4));
}

#[test]
fn print_config_applies_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), r#"{"system": "l96", "T": 64, "seed": 3, "epochs": 9}"#).unwrap();
    let base = ["generate", "--config", "c.json", "--print-config"];
    let v: Value = serde_json::from_str(&ok(&adfilter(&base, tmp.path()))).unwrap();
    assert_eq!((v["steps"].as_u64(), v["seed"].as_u64(), v["dim"].as_u64()), (Some(64), Some(3), Some(40)));

    let out = Command::new(env!("CARGO_BIN_EXE_adfilter"))
        .args(base)
        .current_dir(tmp.path())
        .env("ADFILTER_SEED", "11")
        .output()
        .unwrap();
    let v: Value = serde_json::from_str(&ok(&out)).unwrap();
    assert_eq!(v["seed"].as_u64(), Some(11));

    let mut flags = base.to_vec();
    flags.extend(["--epochs", "2", "--seed", "5"]);
    let v: Value = serde_json::from_str(&ok(&adfilter(&flags, tmp.path()))).unwrap();
    assert_eq!((v["epochs"].as_u64(), v["seed"].as_u64()), (Some(2), Some(5)));
}

#[test]
fn train_evaluate_and_oracle_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&adfilter(
        &[
            "generate",
            "--system",
            "cw",
            "--T",
            "60",
            "--n-train",
            "2",
            "--n-val",
            "1",
            "--n-test",
            "2",
            "--output-dir",
            "r",
        ],
        d,
    ));
    ok(&adfilter(&["train", "--output-dir", "r", "--epochs", "0", "--method", "ad3dvar-c"], d));
    let ck = json(&d.join("r/checkpoint.json"));
    let theta = &ck["params"]["cw_rate"]["latent"];
    ok(&adfilter(&["train", "--output-dir", "r", "--epochs", "0", "--method", "ad3dvar-c"], d));
    assert_eq!(&json(&d.join("r/checkpoint.json"))["params"]["cw_rate"]["latent"], theta, "zero epochs keep the init");
    assert_eq!(fs::read_to_string(d.join("r/curves.csv")).unwrap().lines().count(), 1);

    ok(&adfilter(&["evaluate", "--output-dir", "r"], d));
    let report = json(&d.join("r/report.json"));
    assert_eq!(report["steps"].as_u64(), Some(60));
    let trace = fs::read_to_string(d.join("r/trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("t,loglik,logdet_term,residual_term"));
    assert_eq!(trace.lines().count(), 61);

    ok(&adfilter(&["oracle", "--output-dir", "r"], d));
    let oracle = json(&d.join("r/oracle.json"));
    assert_eq!(fs::read_to_string(d.join("r/oracle_trace.csv")).unwrap().lines().count(), 61);
    assert!(oracle["mean_loglik"].as_f64().unwrap() >= report["mean_loglik"].as_f64().unwrap());

    ok(&adfilter(&["train", "--output-dir", "r", "--epochs", "2", "--method", "adenkf", "--L", "20"], d));
    let curves = fs::read_to_string(d.join("r/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 3);
    assert_eq!(fs::read_to_string(d.join("r/snapshots.csv")).unwrap().lines().count(), 4);
    ok(&adfilter(&["evaluate", "--output-dir", "r"], d));
    assert_eq!(json(&d.join("r/report.json"))["method"], "adenkf");
}

#[test]
fn oracle_rejects_nonlinear_systems() {
    let tmp = tempfile::tempdir().unwrap();
    let mut gen = vec!["generate", "--output-dir", "l"];
    gen.extend(SMALL_L96);
    ok(&adfilter(&gen, tmp.path()));
    let out = adfilter(&["oracle", "--output-dir", "l"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_fails_on_corruption_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let first = ok(&adfilter(&["gradcheck", "--seed", "4"], tmp.path()));
    assert!(first.contains("all passed"));
    assert_eq!(first.lines().filter(|l| l.ends_with(" ok")).count(), 8);
    assert_eq!(ok(&adfilter(&["gradcheck", "--seed", "4", "--jobs", "2"], tmp.path())), first);
    let bad = adfilter(&["gradcheck", "--corrupt"], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(adfilter(&["gradcheck", "--T", "9"], tmp.path()).status.code(), Some(2));
}

#[test]
fn single_cell_taper_grid_matches_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut gen = vec!["generate", "--output-dir", "g", "--seed", "2"];
    gen.extend(SMALL_L96);
    ok(&adfilter(&gen, d));
    let cfg = ["--output-dir", "g", "--method", "adenkf", "--N", "10", "--taper-radius", "3", "--inflation", "0.05"];
    let mut train = vec!["train", "--epochs", "0"];
    train.extend(cfg);
    ok(&adfilter(&train, d));
    ok(&adfilter(&["evaluate", "--output-dir", "g"], d));
    let report = json(&d.join("g/report.json"));
    let mut grid = vec!["tapergrid", "--radii", "3", "--inflations", "0.05"];
    grid.extend(cfg);
    ok(&adfilter(&grid, d));
    let mut rdr = csv::Reader::from_path(d.join("g/heatmap.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    let test_rmse: f64 = rows[0][4].parse().unwrap();
    assert_eq!(test_rmse, report["filter_rmse"].as_f64().unwrap());

    let mut grid = vec!["tapergrid", "--radii", "1,3,6", "--inflations", "0,0.1", "--jobs", "2"];
    grid.extend(cfg);
    ok(&adfilter(&grid, d));
    let mut rdr = csv::Reader::from_path(d.join("g/heatmap.csv")).unwrap();
    let rmse: Vec<f64> = rdr.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
    assert_eq!(rmse.len(), 6);
    assert!(rmse.iter().all(|&v| rmse[0] <= v), "best cell first");

    let out =
        adfilter(&["tapergrid", "--output-dir", "g", "--method", "ad3dvar-c", "--radii", "3", "--inflations", "0"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_jobs_are_independent_of_parallelism() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut one = vec!["generate", "--output-dir", "p1", "--seeds", "1,2"];
    one.extend(SMALL_L96);
    ok(&adfilter(&one, d));
    let mut two = vec!["generate", "--output-dir", "p2", "--seeds", "1,2", "--jobs", "2"];
    two.extend(SMALL_L96);
    ok(&adfilter(&two, d));
    for s in ["seed_1", "seed_2"] {
        let a = fs::read(d.join("p1").join(s).join("data/test_00.obs.csv")).unwrap();
        let b = fs::read(d.join("p2").join(s).join("data/test_00.obs.csv")).unwrap();
        assert_eq!(a, b);
    }
    assert_ne!(
        fs::read(d.join("p1/seed_1/data/train_00.truth.csv")).unwrap(),
        fs::read(d.join("p1/seed_2/data/train_00.truth.csv")).unwrap()
    );
}
