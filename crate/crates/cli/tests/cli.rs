use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn meor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meor"))
        .args(args)
        .output()
        .expect("meor runs")
}

fn meor_with_stdin(args: &[&str], input: &[u8]) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_meor"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("meor starts");
    child
        .stdin
        .take()
        .expect("stdin")
        .write_all(input)
        .expect("stdin accepts config");
    child.wait_with_output().expect("meor finishes")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("output directory exists")
        .map(|e| e.expect("directory entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn list_names_every_builtin() {
    let out = meor(&["list"]);
    assert!(out.status.success());
    let stdout = text(&out.stdout);
    for name in meor_core::scenarios::BUILTIN_NAMES {
        assert!(
            stdout.lines().any(|l| l.starts_with(name)),
            "{name} missing from\n{stdout}"
        );
    }
}

#[test]
fn unknown_scenario_suggests_close_names() {
    let out = meor(&["run", "hendry-kin"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = text(&out.stderr);
    assert!(stderr.contains("hendry-kim"), "{stderr}");
}

#[test]
fn export_config_rejects_unknown_scenario() {
    let out = meor(&["export-config", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_usage_code_and_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "[mesh]\nlenght = 3 m\n").unwrap();
    let out = meor(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = text(&out.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");
    assert!(stderr.contains("mesh.lenght"), "{stderr}");
}

#[test]
fn wrong_unit_dimension_is_a_config_error() {
    let exported = meor(&["export-config", "coreflood"]);
    let cfg = text(&exported.stdout).replacen("length = ", "length = 2 s # was ", 1);
    let out = meor_with_stdin(&["run", "-"], cfg.as_bytes());
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
}

#[test]
fn invalid_validation_group_is_rejected() {
    let out = meor(&["validate", "everything"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exported_config_reproduces_builtin_run() {
    let dir = tempfile::tempdir().unwrap();
    let direct = dir.path().join("direct");
    let piped = dir.path().join("piped");
    let out = meor(&["run", "hendry-thiswork", "--out", direct.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("results in"));

    let exported = meor(&["export-config", "hendry-thiswork"]);
    assert!(exported.status.success());
    let out = meor_with_stdin(
        &["run", "-", "--out", piped.to_str().unwrap()],
        &exported.stdout,
    );
    assert!(out.status.success(), "{}", text(&out.stderr));

    let a = csv_files(&direct);
    let b = csv_files(&piped);
    assert!(
        a.contains_key("recovery.csv") && a.contains_key("effluent.csv"),
        "{:?}",
        a.keys()
    );
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(direct.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
}

#[test]
fn solver_failure_exits_with_code_three_and_keeps_partial_output() {
    let exported = text(&meor(&["export-config", "dp1-secondary"]).stdout);
    let cfg: String = exported
        .lines()
        .map(|l| {
            if l.starts_with("flow_max_iterations") {
                "flow_max_iterations = 1".to_string()
            } else if l.starts_with("max_rejections") {
                "max_rejections = 1".to_string()
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let dir = tempfile::tempdir().unwrap();
    let out = meor_with_stdin(
        &["run", "-", "--out", dir.path().to_str().unwrap()],
        cfg.as_bytes(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("solver failure"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["status"].as_str().unwrap().starts_with("failed"));
}

#[test]
fn fixed_step_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(k.to_string());
        let out = meor(&[
            "run",
            "coreflood",
            "--mesh",
            "20",
            "--dt",
            "300",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", text(&out.stderr));
        outputs.push(csv_files(&out_dir));
    }
    assert_eq!(outputs[0], outputs[1]);
    let recovery = text(&outputs[0]["recovery.csv"]);
    let times: Vec<f64> = recovery
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(times.windows(2).all(|w| w[1] - w[0] <= 300.0 + 1e-9));
    assert!((times.last().unwrap() - 86400.0).abs() < 1e-6);
}
