//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

fn mecgame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mecgame"))
        .args(args)
        .env_remove("MECGAME_OUT_DIR")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&mecgame(&["--help"])), 0);
    assert_eq!(code(&mecgame(&["no-such-command"])), 2);
    assert_eq!(code(&mecgame(&["experiment", "--recipe", "fig99"])), 2);
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.json");
    let out = mecgame(&[
        "ipoa",
        "--config",
        path(&missing),
        "--out",
        path(tmp.path()),
        "--quiet",
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn convergence_recipe_writes_traces_and_repeats_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = mecgame(&[
            "experiment",
            "--recipe",
            "convergence",
            "--seed",
            "1",
            "--out",
            path(dir),
            "--quiet",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["trace.jsonl", "summary.csv"] {
        let x = std::fs::read(a.join(file)).unwrap();
        assert!(!x.is_empty(), "{file}");
        assert_eq!(x, std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let (mut m, mut n) = (manifest(&a), manifest(&b));
    assert_ne!(m["spec"]["out"], n["spec"]["out"]);
    m["spec"]["out"].take();
    n["spec"]["out"].take();
    assert_eq!(m, n, "manifests differ beyond the output path");
    assert_eq!(m["seed"], 1);
    assert_eq!(m["recipe"], "convergence");
    assert!(m["version"].is_string());
    assert!(m["spec"]["scenario"].is_object(), "every default is echoed");
}

#[test]
fn environment_overrides_out_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let (flag, env) = (tmp.path().join("flag"), tmp.path().join("env"));
    let out = Command::new(env!("CARGO_BIN_EXE_mecgame"))
        .args([
            "generate",
            "--m",
            "4",
            "--seed",
            "2",
            "--quiet",
            "--out",
            path(&flag),
        ])
        .env("MECGAME_OUT_DIR", &env)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(env.join("scenario.json").is_file());
    assert!(!flag.exists());
}

#[test]
fn generated_scenario_feeds_follower_and_validation_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = tmp.path().join("gen");
    let out = mecgame(&[
        "generate",
        "--m",
        "6",
        "--n-edge",
        "2",
        "--seed",
        "3",
        "--set",
        "power_tx_w=0.4",
        "--out",
        path(&gen),
        "--quiet",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let scenario = gen.join("scenario.json");

    let run = tmp.path().join("ipoa");
    let out = mecgame(&[
        "ipoa",
        "--scenario",
        path(&scenario),
        "--prices",
        "0.2,0.1,0.1",
        "--out",
        path(&run),
        "--quiet",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(run.join("ipoa.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    assert!(run.join("manifest.json").is_file());

    let val = tmp.path().join("val");
    let out = mecgame(&[
        "validate",
        "--scenario",
        path(&scenario),
        "--points",
        "20",
        "--seed",
        "3",
        "--out",
        path(&val),
        "--quiet",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_on_default_scenario_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mecgame(&[
        "validate",
        "--seed",
        "1",
        "--points",
        "20",
        "--out",
        path(tmp.path()),
        "--quiet",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn partial_config_starts_from_its_recipe_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("c.json");
    std::fs::write(&config, r#"{"recipe": "price_trace", "scenario": {"m": 6}, "sweep": [6], "ispa": {"max_iters": 1}}"#).unwrap();
    let out = mecgame(&[
        "experiment",
        "--config",
        path(&config),
        "--out",
        path(tmp.path()),
        "--quiet",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(tmp.path());
    assert!(
        m["spec"]["prices_usd_per_gcycle"].is_null(),
        "price recipes start at cost"
    );
    assert_eq!(m["spec"]["scenario"]["n_edge"], 3);
    assert_eq!(m["spec"]["ispa"]["max_iters"], 1);

    std::fs::write(&config, r#"{"recipe": "price_trace", "bogus": 1}"#).unwrap();
    let out = mecgame(&[
        "experiment",
        "--config",
        path(&config),
        "--out",
        path(tmp.path()),
        "--quiet",
    ]);
    assert_eq!(code(&out), 2);
}
