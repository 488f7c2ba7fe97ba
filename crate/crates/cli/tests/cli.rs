use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn core(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core").join(rel)
}

fn mulearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mulearn"))
        .args(args)
        .env_remove("MULEARN_OUT")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_exit_codes() {
    let ok = mulearn(&["check", core("models/example1.hpmodel").to_str().unwrap()]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));

    let dir = tempfile::tempdir().unwrap();
    let looped = dir.path().join("loop.hpmodel");
    fs::write(&looped, "init: true; ctrl: {a := 1}*; plant: {v' = a}; safe: true").unwrap();
    let bad = mulearn(&["check", looped.to_str().unwrap()]);
    assert_eq!(code(&bad), 1);
    assert!(stderr(&bad).contains("loop-free ctrl violated"), "{}", stderr(&bad));

    let missing = mulearn(&["check", dir.path().join("absent.hpmodel").to_str().unwrap()]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn instantiate_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e1.hpmodel");
    let o = mulearn(&[
        "update",
        core("models/example1.hpmodel").to_str().unwrap(),
        "--op",
        "instantiate_parameter",
        "--param",
        "A=2",
        "-o",
        out.to_str().unwrap(),
        "--samples",
        "200",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let written = fs::read_to_string(&out).unwrap();
    let golden =
        fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/example1_a2.hpmodel")).unwrap();
    assert_eq!(written, golden);
    mulearn::dsl::parse_model(&written).unwrap();

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("e1.hpmodel.report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "pass");
    assert_eq!(report["samples"], 200);
    for field in [
        "model",
        "seed",
        "transitions",
        "blocked",
        "safety_violations",
        "monitor_rejections",
        "counterexample",
    ] {
        assert!(report.get(field).is_some(), "{field}");
    }
}

#[test]
fn undecidable_guard_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("odd.hpmodel");
    fs::write(
        &model,
        "init: B > 0; ctrl: ?v * B > 1; a := B; plant: {v' = a}; safe: true",
    )
    .unwrap();
    let o = mulearn(&[
        "update",
        model.to_str().unwrap(),
        "--op",
        "add_disturbance",
        "--param",
        "ode_var=v",
        "--param",
        "kind=multiplicative",
        "--param",
        "bound=0.5",
        "-o",
        dir.path().join("x.hpmodel").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("v * B > 1"), "{}", stderr(&o));
}

#[test]
fn failing_validation_exits_one() {
    // additive noise on the coasting branch drives v below zero
    let dir = tempfile::tempdir().unwrap();
    let o = mulearn(&[
        "update",
        core("models/example1.hpmodel").to_str().unwrap(),
        "--op",
        "add_disturbance",
        "--param",
        "ode_var=v",
        "--param",
        "kind=additive",
        "--param",
        "bound=0.1",
        "-o",
        dir.path().join("noisy.hpmodel").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("noisy.hpmodel.report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "fail");
}

#[test]
fn learns_from_bundled_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("learned.hpmodel");
    let o = mulearn(&[
        "update",
        core("data/double_integrator.hpmodel").to_str().unwrap(),
        "--op",
        "learn_linear_dynamics",
        "--data",
        core("data/double_integrator.json").to_str().unwrap(),
        "--param",
        "grid.u=-1,0,1",
        "--param",
        "horizon=0.5",
        "-o",
        out.to_str().unwrap(),
        "--samples",
        "200",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = mulearn::dsl::parse_model(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(m.plant.rhs("p").unwrap().to_string(), "v");
    assert_eq!(m.plant.rhs("v").unwrap().to_string(), "u");
    assert!(dir.path().join("learned.hpmodel.report.json").exists());
}

#[test]
fn bad_parameters_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = mulearn(&[
        "update",
        core("models/example1.hpmodel").to_str().unwrap(),
        "--op",
        "no_such_update",
        "-o",
        dir.path().join("x.hpmodel").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    let o = mulearn(&[
        "update",
        core("models/example1.hpmodel").to_str().unwrap(),
        "--op",
        "instantiate_parameter",
        "--param",
        "A",
        "-o",
        dir.path().join("x.hpmodel").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn run_honours_output_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fn");
    let o = Command::new(env!("CARGO_BIN_EXE_mulearn"))
        .args(["run", core("configs/footnote.toml").to_str().unwrap()])
        .env("MULEARN_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows = mulearn::experiment::read_summary_csv(&csv).unwrap();
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|r| r.violations == 0));
    assert_eq!(mulearn::experiment::summarize_dir(&out).unwrap(), rows);
    assert!(out.join("run_manifest.json").exists());
}

#[test]
fn run_reports_violations_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    // a model set that believes the brakes are twice as strong as they are
    let cfg = dir.path().join("optimistic.toml");
    fs::write(
        &cfg,
        r#"
        name = "optimistic"
        algorithm = "mu"
        episodes = 50
        step_limit = 100
        learner = { kind = "first" }
        [env]
        kind = "acc"
        variant = "brake"
        p_grid = [0.25]
        model_grid = [1.5]
        "#,
    )
    .unwrap();
    let o = mulearn(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1, "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));

    let zero = dir.path().join("zero.toml");
    fs::write(
        &zero,
        "name = \"z\"\nalgorithm = \"mu\"\nepisodes = 0\nstep_limit = 1\n[env]\nkind = \"footnote\"\n",
    )
    .unwrap();
    let o = mulearn(&["run", zero.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("episodes"), "{}", stderr(&o));
}
