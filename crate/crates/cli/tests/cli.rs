//! End-to-end behaviour of the `fdmr` binary: exit codes, atomic output and
//! determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

fn fdmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdmr")).args(args).env_remove("FDMR_THREADS").output().unwrap()
}

fn run_in(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    fdmr(&args)
}

fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| !e.file_name().to_string_lossy().ends_with("manifest.json"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn unknown_key_is_a_config_error_with_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(default_config()).unwrap().replace("[bands]\n", "[bands]\nresolution = 3\n");
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let o = run_in("bands", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("resolution"));
    assert!(!out.exists());
}

#[test]
fn invalid_physics_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(default_config()).unwrap().replace("eta_s = 0.1", "eta_s = 1.5");
    let cfg = write_config(tmp.path(), &text);
    assert_eq!(run_in("sfwm", &cfg, &tmp.path().join("out"), &[]).status.code(), Some(2));
}

#[test]
fn missing_config_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_in("bands", &tmp.path().join("absent.toml"), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn missing_fit_input_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_in("fit", &default_config(), &tmp.path().join("out"), &["--input", tmp.path().join("none.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn leaving_the_weak_pumping_regime_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(default_config()).unwrap().replace("sweep_stop_w = 3e-3", "sweep_stop_w = 5e-3");
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let o = run_in("sfwm", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fdmr"))
        .args(["sfwm", "--config", default_config().to_str().unwrap(), "--out", tmp.path().to_str().unwrap()])
        .env("FDMR_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for cmd in ["sfwm", "counts", "fields"] {
        assert!(run_in(cmd, &default_config(), &a, &["--seed", "7"]).status.success());
        assert!(run_in(cmd, &default_config(), &b, &["--seed", "7"]).status.success());
    }
    assert!(run_in("counts", &default_config(), &c, &["--seed", "8"]).status.success());
    let (fa, fb) = (data_files(&a), data_files(&b));
    assert_eq!(fa.len(), 9);
    assert_eq!(fa, fb);
    let hist = |d: &Path| std::fs::read(d.join("histogram.csv")).unwrap();
    assert_ne!(hist(&a), hist(&c));
}

#[test]
fn manifest_lists_checksums_of_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = run_in("sfwm", &default_config(), &out, &[]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("sfwm.manifest.json")).unwrap()).unwrap();
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 3);
    for e in outputs {
        let bytes = std::fs::read(out.join(e["file"].as_str().unwrap())).unwrap();
        assert_eq!(e["sha256"].as_str().unwrap(), fdmr_cli::output::sha256_hex(&bytes));
    }
    assert_eq!(m["config_sha256"].as_str().unwrap(), fdmr_cli::output::sha256_hex(&std::fs::read(default_config()).unwrap()));
    assert!(m["timings"]["compute_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn fit_reads_transmission_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let text = std::fs::read_to_string(default_config()).unwrap().replace("points = 1281", "points = 801");
    let cfg = write_config(tmp.path(), &text);
    assert!(run_in("transmission", &cfg, &out, &[]).status.success());
    let input = out.join("transmission_defect_on.csv");
    let o = run_in("fit", &cfg, &out, &["--input", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let f: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("fit.json")).unwrap()).unwrap();
    let l0 = f["fit"]["primary"]["lambda0_nm"].as_f64().unwrap();
    assert!((l0 - 1543.36).abs() < 0.05, "{l0}");
}
