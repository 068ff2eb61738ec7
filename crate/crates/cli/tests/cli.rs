use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_imac-sim"))
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mnist")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_in(out: &Path, args: &[&str]) -> Output {
    bin().arg("--out").arg(out).args(args).output().unwrap()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn mac_full_scale_trace() {
    let v = json(&run(&[
        "--format", "json", "mac", "--vin", "15", "--w", "15", "--trace",
    ]));
    let decoded = v["decoded"].as_f64().unwrap();
    assert!((decoded - 225.0).abs() <= 140.625);
    let el = &v["groups"][0]["elements"][0];
    assert_eq!(el["v_ch_sh_mv"].as_f64(), Some(750.0));
    assert_eq!(el["delta_v_acc_mv"].as_f64(), Some(9.375));
}

#[test]
fn mac_zero_input_decodes_zero() {
    let v = json(&run(&["--format", "json", "mac", "--vin", "0", "--w", "7"]));
    assert_eq!(v["decoded"].as_i64(), Some(0));
}

#[test]
fn mac_signed_operands() {
    let v = json(&run(&[
        "--format", "json", "mac", "--vin", "-15,15", "--w", "15,-15",
    ]));
    assert_eq!(v["exact"].as_i64(), Some(-450));
    assert!((v["decoded"].as_f64().unwrap() + 450.0).abs() <= 140.625);
}

#[test]
fn input_domain_errors_exit_2() {
    let o = run(&["mac", "--vin", "1,2", "--w", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["mac", "--vin", "3,16", "--w", "1,1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("1"));
    let o = run(&["montecarlo", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn montecarlo_is_byte_reproducible() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    let args = ["--seed", "11", "montecarlo", "--trials", "500"];
    assert!(run_in(a.path(), &args).status.success());
    assert!(run_in(b.path(), &args).status.success());
    assert!(
        run_in(c.path(), &["--seed", "12", "montecarlo", "--trials", "500"])
            .status
            .success()
    );
    for f in ["histogram.csv", "montecarlo.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        fs::read(a.path().join("histogram.csv")).unwrap(),
        fs::read(c.path().join("histogram.csv")).unwrap()
    );
}

#[test]
fn montecarlo_default_std() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&run_in(dir.path(), &["--format", "json", "montecarlo"]));
    assert_eq!(v["trials"].as_u64(), Some(1000));
    assert!(v["std"].as_f64().unwrap() <= 0.6);
}

fn infer_args<'a>(weights: &'a str, data: &'a str) -> Vec<&'a str> {
    vec![
        "infer",
        "--net",
        "lenet5",
        "--weights",
        weights,
        "--data",
        data,
        "--limit",
        "100",
    ]
}

#[test]
fn infer_noise_free_runs_agree() {
    let w = fixture().join("lenet5.tensors");
    let d = fixture();
    let (w, d) = (w.to_str().unwrap(), d.to_str().unwrap());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut args = vec!["--format", "json"];
    args.extend(infer_args(w, d));
    args.extend(["--trials", "1", "--noise", "none"]);
    let va = json(&run_in(a.path(), &args));
    let vb = json(&run_in(b.path(), &args));
    assert_eq!(va["band"]["mean"], vb["band"]["mean"]);
    assert_eq!(
        fs::read(a.path().join("accuracy.csv")).unwrap(),
        fs::read(b.path().join("accuracy.csv")).unwrap()
    );
}

#[test]
fn infer_missing_dataset_exits_2() {
    let w = fixture().join("lenet5.tensors");
    let o = run(&infer_args(w.to_str().unwrap(), "/nonexistent/mnist"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infer_corrupt_weights_exit_4_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = fs::read(fixture().join("lenet5.tensors")).unwrap();
    let bad = dir.path().join("bad.tensors");
    fs::write(&bad, &bytes[..bytes.len() / 2]).unwrap();
    let d = fixture();
    let o = run(&infer_args(bad.to_str().unwrap(), d.to_str().unwrap()));
    assert_eq!(o.status.code(), Some(4));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(
        msg.contains("bad.tensors") && msg.contains("at byte"),
        "{msg}"
    );
}

#[test]
fn perf_reports_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["perf", "--sweep-bio", "16:256:16", "--area"]);
    assert!(o.status.success());
    let sweep = fs::read_to_string(dir.path().join("sweep_bio.csv")).unwrap();
    let edp: Vec<f64> = sweep
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(edp.len(), 16);
    assert!(edp.windows(2).all(|w| w[1] <= w[0]));
    let area = fs::read_to_string(dir.path().join("area.csv")).unwrap();
    for row in [
        "SRAM cell,83100",
        "ADC,40800",
        "Accumulator,30600",
        "DAC,400",
        "MUX,2100",
        "Decoder,4800",
        "Column circuit,44000",
    ] {
        assert!(area.contains(row), "{row}");
    }
    let perf: Value =
        serde_json::from_slice(&fs::read(dir.path().join("perf.json")).unwrap()).unwrap();
    assert_eq!(perf["report"]["layers"].as_array().unwrap().len(), 5);
}

#[test]
fn perf_bad_range_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run_in(dir.path(), &["perf", "--sweep-bio", "16:8:4"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run_in(dir.path(), &["perf", "--b-io", "0"]).status.code(),
        Some(2)
    );
}

#[test]
fn constraints_pass_and_fail() {
    let v = json(&run(&["--format", "json", "constraints"]));
    assert!(v.to_string().contains("225"));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.json");
    fs::write(&cfg, r#"{"device": {"c_acc": 20.0}}"#).unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "constraints"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_is_strict_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"device": {"c_acc": 40.0, "typo": 1}}"#).unwrap();
    assert_eq!(
        run(&["--config", cfg.to_str().unwrap(), "config-dump"])
            .status
            .code(),
        Some(2)
    );

    let dump = run(&["config-dump"]);
    assert!(dump.status.success());
    fs::write(&cfg, &dump.stdout).unwrap();
    let again = run(&["--config", cfg.to_str().unwrap(), "config-dump"]);
    assert_eq!(dump.stdout, again.stdout);
}

#[test]
fn adc_table_lists_every_code() {
    let o = run(&["--format", "csv", "adc-table"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 17);
}

#[test]
fn outputs_independent_of_thread_count() {
    let w = fixture().join("lenet5.tensors");
    let d = fixture();
    let mut files = Vec::new();
    for threads in ["1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let mut args = vec!["--seed", "5"];
        args.extend(infer_args(w.to_str().unwrap(), d.to_str().unwrap()));
        args.extend(["--trials", "3", "--noise", "digital"]);
        let o = bin()
            .env("IMAC_SIM_THREADS", threads)
            .arg("--out")
            .arg(dir.path())
            .args(&args)
            .output()
            .unwrap();
        assert!(o.status.success());
        files.push((
            fs::read(dir.path().join("accuracy.csv")).unwrap(),
            fs::read(dir.path().join("band.json")).unwrap(),
        ));
    }
    assert_eq!(files[0], files[1]);
}
