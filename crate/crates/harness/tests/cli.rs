use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use oufield_cli::{ResultRecord, Status};

const REFERENCE: &str = "seed = 11\n[spectrum]\nfamily = \"power_law\"\na = 1.0\nalpha = 0.25\n";

fn oufield(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oufield"))
        .args(args)
        .current_dir(dir)
        .env_remove(oufield_cli::OUT_DIR_ENV)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn verdict(dir: &Path) -> ResultRecord {
    serde_json::from_str(&fs::read_to_string(dir.join("verdict.json")).unwrap()).unwrap()
}

#[test]
fn spectrum_check_passes_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", REFERENCE);
    let out = oufield(tmp.path(), &["spectrum-check", "--config", &cfg, "--out", "res"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("res/spectrum-check");
    let v = verdict(&dir);
    assert!(v.passed);
    for id in ["closability", "qv", "approx"] {
        let row = v.row(id).unwrap();
        assert_eq!(row.status, Status::Pass);
        assert_eq!(row.detail, "converges_analytically");
    }
    let csv = fs::read_to_string(dir.join("spectrum_check.csv")).unwrap();
    assert!(csv.starts_with("condition,m,term,partial_sum,verdict\n"));
    let metrics = ResultRecord::rows_from_csv(&fs::read_to_string(dir.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(metrics, v.rows);
}

#[test]
fn divergent_spectrum_exits_with_verdict_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &REFERENCE.replace("0.25", "1.0"));
    let out = oufield(tmp.path(), &["spectrum-check", "--config", &cfg, "--out", "res"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!verdict(&tmp.path().join("res/spectrum-check")).passed);
}

#[test]
fn config_errors_name_the_field_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &format!("{REFERENCE}[field]\nlevel = 6\ngrid_depth = 6\n"),
    );
    let out = oufield(tmp.path(), &["theta", "--config", &cfg, "--out", "res"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("field.grid_depth"));
    assert!(!tmp.path().join("res/theta").exists());

    let cfg = write_config(tmp.path(), "d.toml", &format!("{REFERENCE}[field]\nstep = \"fine\"\n"));
    let out = oufield(tmp.path(), &["theta", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("field.step"));

    let out = oufield(tmp.path(), &["theta", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn degenerate_theta_matches_half_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "seed = 3\n[spectrum]\nfamily = \"explicit\"\nvalues = [3.0, 0.0]\ndegenerate = true\n\
                [field]\nlevel = 0\ngrid_depth = 4\nnorms = [\"l1\"]\n[theta]\nsamples = 20000\n";
    let cfg = write_config(tmp.path(), "c.toml", body);
    let out = oufield(tmp.path(), &["theta", "--config", &cfg, "--out", "res"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = verdict(&tmp.path().join("res/theta"));
    let row = v.row("theta_vs_closed_form[l1]").unwrap();
    assert_eq!(row.reference, Some(1.5));
    assert!((row.value - 1.5).abs() < 3.0 * row.se.unwrap());
}

#[test]
fn reruns_are_bit_identical_and_seed_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("{REFERENCE}[ito]\nn_paths = 300\n");
    let cfg = write_config(tmp.path(), "c.toml", &body);
    let read = |sub: &str| {
        let d = tmp.path().join(sub).join("ito-check");
        (
            fs::read(d.join("ito.csv")).unwrap(),
            fs::read(d.join("verdict.json")).unwrap(),
        )
    };
    oufield(
        tmp.path(),
        &["ito-check", "--config", &cfg, "--out", "a", "--workers", "1"],
    );
    oufield(
        tmp.path(),
        &["ito-check", "--config", &cfg, "--out", "b", "--workers", "3"],
    );
    oufield(
        tmp.path(),
        &["ito-check", "--config", &cfg, "--out", "c", "--seed", "12"],
    );
    assert_eq!(read("a"), read("b"));
    let (a, c) = (
        verdict(&tmp.path().join("a/ito-check")),
        verdict(&tmp.path().join("c/ito-check")),
    );
    assert_ne!(a.config_digest, c.config_digest);
    assert_ne!(read("a").0, read("c").0);
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", REFERENCE);
    let out = Command::new(env!("CARGO_BIN_EXE_oufield"))
        .args(["spectrum-check", "--config", &cfg])
        .current_dir(tmp.path())
        .env(oufield_cli::OUT_DIR_ENV, tmp.path().join("from_env"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(tmp.path().join("from_env/spectrum-check/verdict.json").exists());
}
