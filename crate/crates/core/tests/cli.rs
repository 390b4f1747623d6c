use std::path::Path;
use std::process::{Command, Output};

use ehom::cli::RunReport;
use ehom::environment::io::{field_to_bytes, read_field};
use tempfile::TempDir;

const IDENTITY: &str = r#"
seed = 1

[environment]
dimension = 2
[environment.model]
kind = "identity"

[moments]
p = 3.0
q = 3.0

[grid]
cells_per_side = 16

[montecarlo]
paths = 200
t_max = 0.25
record_stride = 0.125
theta = { constant = 2.0 }
trace_paths = 2
thresholds = { min_paths = 100 }

[check]
effective = [2.0, 0.0, 0.0, 2.0]
effective_tolerance = 1e-8
"#;

const CHECKERBOARD: &str = r#"
[environment]
dimension = 2
[environment.model]
kind = "checkerboard"
a_low = 1.0
a_high = 4.0
tile_cells = 16

[moments]
p = 3.0
q = 2.0

[grid]
cells_per_side = 64

[sublinearity]
sizes = [32, 64]
radius = 0.25

[audit]
sizes = [32, 64]

[check]
effective = [4.0, 0.0, 0.0, 4.0]
effective_tolerance = 0.02
"#;

fn ehom(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ehom"));
    cmd.args(args).env_remove("EH_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn run(config: &str, out: &Path, extra: &[&str]) -> Output {
    let out = out.to_string_lossy();
    let mut args = vec!["run", "--config", config, "--out", &out];
    args.extend_from_slice(extra);
    ehom(&args, &[])
}

#[test]
fn identity_end_to_end_with_check() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "id.toml", IDENTITY);
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &["--check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let report = RunReport::load(&out.join("report.json")).unwrap();
    let dm = report.effective.as_ref().unwrap();
    assert!(dm.max_abs_diff(&[2.0, 0.0, 0.0, 2.0]) <= 1e-8);
    assert!(report.checks.iter().all(|c| c.pass) && !report.checks.is_empty());
    assert!(report.clt.as_ref().unwrap().qv.is_some());
    assert_eq!(report.time_change.as_ref().unwrap().covariance_scale, 0.5);
    for a in &report.artifacts {
        assert!(out.join(a).exists(), "{a:?}");
    }
    for a in ["field.ehf", "correctors.chi", "walk/path_000001.wlk", "endpoints.csv", "clt.csv"] {
        assert!(out.join(a).exists(), "{a}");
    }
    let md = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("D₁₁ = 2.000000"), "{md}");
}

#[test]
fn report_rendering() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cb.toml", CHECKERBOARD);
    let out = dir.path().join("out");
    assert_eq!(code(&run(&cfg, &out, &[])), 0);
    let stored = out.join("report.json");
    let path = stored.to_string_lossy();

    let json = ehom(&["report", &path, "--format", "json"], &[]);
    assert_eq!(code(&json), 0);
    assert_eq!(json.stdout, std::fs::read(&stored).unwrap());

    let csv_dir = dir.path().join("csv");
    let csv = ehom(&["report", &path, "--format", "csv", "--out", &csv_dir.to_string_lossy()], &[]);
    assert_eq!(code(&csv), 0);
    let mut names: Vec<String> = std::fs::read_dir(&csv_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["audit.csv", "sublinearity.csv"]);
    let audit = std::fs::read_to_string(csv_dir.join("audit.csv")).unwrap();
    assert!(audit.starts_with("epsilon,lhs,rhs_core,ratio"));

    let md = ehom(&["report", &path, "--format", "md"], &[]);
    let text = String::from_utf8(md.stdout).unwrap();
    assert!(text.contains("## Variational bounds") && text.contains("envelope"));

    let mut value: serde_json::Value = serde_json::from_slice(&std::fs::read(&stored).unwrap()).unwrap();
    value["schema_version"] = 99.into();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, value.to_string()).unwrap();
    let o = ehom(&["report", &bad.to_string_lossy()], &[]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
}

#[test]
fn report_reparses_to_the_same_value() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "id.toml", IDENTITY);
    let out = dir.path().join("out");
    assert_eq!(code(&run(&cfg, &out, &[])), 0);
    let text = std::fs::read_to_string(out.join("report.json")).unwrap();
    let report = RunReport::from_json(&text).unwrap();
    assert_eq!(report.to_json().unwrap(), text);
    assert_eq!(RunReport::from_json(&report.to_json().unwrap()).unwrap(), report);
}

#[test]
fn checkerboard_check_and_tampered_oracle() {
    let dir = TempDir::new().unwrap();
    let good = write_config(&dir, "cb.toml", CHECKERBOARD);
    let o = ehom(&["effective", "--config", &good, "--out", &dir.path().join("a").to_string_lossy(), "--check"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let tampered = write_config(&dir, "bad.toml", &CHECKERBOARD.replace("[4.0, 0.0, 0.0, 4.0]", "[4.5, 0.0, 0.0, 4.5]"));
    let out = dir.path().join("b");
    let o = ehom(&["effective", "--config", &tampered, "--out", &out.to_string_lossy(), "--check"], &[]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("effective"));
    let report = RunReport::load(&out.join("report.json")).unwrap();
    assert!(!report.checks_pass());
}

#[test]
fn inadmissible_exponents_fail_validation() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "pq.toml", &IDENTITY.replace("p = 3.0\nq = 3.0", "p = 2.0\nq = 2.0"));
    let out = dir.path().join("out");
    let o = ehom(&["validate", "--config", &cfg, "--out", &out.to_string_lossy()], &[]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("config") && err.contains("moments"), "{err}");
    assert!(!out.join("report.json").exists());
}

#[test]
fn trap_is_rejected() {
    let dir = TempDir::new().unwrap();
    let trap = r#"
[environment]
dimension = 2
[environment.model]
kind = "bessel_trap"
exponent = 2.0

[moments]
p = 3.0
q = 3.0
refinement_sizes = [32, 64, 128]

[grid]
cells_per_side = 32
box_side = 4.0
"#;
    let cfg = write_config(&dir, "trap.toml", trap);
    let out = dir.path().join("out").to_string_lossy().into_owned();
    let o = ehom(&["validate", "--config", &cfg, "--out", &out], &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverges"));

    let walk = format!("{trap}\n[montecarlo]\npaths = 1000\nt_max = 1.0\nrecord_stride = 1.0\n");
    let cfg = write_config(&dir, "walk.toml", &walk);
    let o = ehom(&["simulate", "--config", &cfg, "--out", &out], &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn non_convergence_exit_code() {
    let dir = TempDir::new().unwrap();
    let text = format!("{CHECKERBOARD}\n[solver]\ntol = 1e-12\nmax_iter = 2\n");
    let cfg = write_config(&dir, "nc.toml", &text);
    let o = ehom(&["solve", "--config", &cfg, "--out", &dir.path().join("o").to_string_lossy()], &[]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: solve:"));
}

#[test]
fn bad_configs_exit_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o").to_string_lossy().into_owned();
    let unknown = write_config(&dir, "u.toml", &format!("{IDENTITY}\nbogus = 1\n"));
    assert_eq!(code(&ehom(&["gen", "--config", &unknown, "--out", &out], &[])), 2);
    let odd = write_config(&dir, "odd.toml", &CHECKERBOARD.replace("cells_per_side = 64", "cells_per_side = 48"));
    assert_eq!(code(&ehom(&["gen", "--config", &odd, "--out", &out], &[])), 2);
    assert_eq!(code(&ehom(&["gen", "--out", &out], &[])), 2);
    let missing = write_config(&dir, "m.toml", IDENTITY);
    assert_eq!(code(&ehom(&["audit", "--config", &missing, "--out", &out], &[])), 2);
}

#[test]
fn runs_are_deterministic_and_threads_do_not_matter() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "id.toml", IDENTITY);
    let out = dir.path().join("out");
    assert_eq!(code(&run(&cfg, &out, &["--threads", "1"])), 0);
    let first = RunReport::load(&out.join("report.json")).unwrap();
    let first_field = std::fs::read(out.join("field.ehf")).unwrap();
    let o = ehom(&["run", "--config", &cfg, "--out", &out.to_string_lossy()], &[("EH_THREADS", "2")]);
    assert_eq!(code(&o), 0);
    let second = RunReport::load(&out.join("report.json")).unwrap();
    assert_eq!(first.without_timings(), second.without_timings());
    assert_eq!(std::fs::read(out.join("field.ehf")).unwrap(), first_field);

    let o = run(&cfg, &out, &["--seed", "2"]);
    assert_eq!(code(&o), 0);
    let reseeded = RunReport::load(&out.join("report.json")).unwrap();
    assert_eq!(reseeded.config.seed, 2);
    assert_ne!(reseeded.clt, first.clt);
}

#[test]
fn field_artifact_round_trips() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cb.toml", CHECKERBOARD);
    let out = dir.path().join("out");
    let o = ehom(&["gen", "--config", &cfg, "--out", &out.to_string_lossy()], &[]);
    assert_eq!(code(&o), 0);
    let bytes = std::fs::read(out.join("field.ehf")).unwrap();
    assert_eq!(&bytes[..4], b"EHF1");
    let field = read_field(&mut bytes.as_slice()).unwrap();
    assert_eq!(field_to_bytes(&field), bytes);
    let report = RunReport::load(&out.join("report.json")).unwrap();
    assert_eq!(report.stages, ["gen"]);
    assert!(report.effective.is_none());
}
