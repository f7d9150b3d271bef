use std::path::Path;
use std::process::Command;

const MODEL: &str = r#"{"K":1,"A":1.0,"m":1,"kind":"linear","nu":[1.0],"h":[[0.5]]}"#;

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(
        &path,
        format!(
            "model_json = '{MODEL}'\nhorizons = [120.0]\nreplications = 2\nseed = 9\niterations = 100\n\
             j_max = 4\nkappa = 0.0\npalm_horizon = 2000.0\npalm_batches = 4\npalm_cells = 2\n\
             bias_j = [2]\nbias_windows = 4\nout_dir = \"out\"\n{extra}"
        ),
    )
    .unwrap();
    path
}

fn hawkes(args: &[&str], seed_env: Option<&str>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hawkes"));
    cmd.args(args).env("RUST_LOG", "error").env_remove("HAWKES_SEED");
    if let Some(seed) = seed_env {
        cmd.env("HAWKES_SEED", seed);
    }
    cmd.output().unwrap()
}

#[test]
fn bvm_smoke_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let out = hawkes(&["bvm", "--config", config.to_str().unwrap(), "--threads", "2"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["report.json", "replications.csv", "posterior_0.csv", "posterior_1.csv", "plots.gp"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "basis = \"spline\"\n");
    let out = hawkes(&["simulate", "--config", config.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let missing = hawkes(&["simulate", "--config", "/nonexistent/experiment.toml"], None);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "").to_str().unwrap().to_owned();
    std::fs::write(
        dir.path().join("tiny.toml"),
        std::fs::read_to_string(&config).unwrap().replace("palm_horizon = 2000.0", "palm_horizon = 20.0"),
    )
    .unwrap();
    let out = hawkes(&["palm", "--config", dir.path().join("tiny.toml").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_precedence_is_flag_then_env_then_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let run = |name: &str, flag: Option<&str>, env: Option<&str>| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["simulate", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
        if let Some(seed) = flag {
            args.extend(["--seed", seed]);
        }
        let out = hawkes(&args, env);
        assert!(out.status.success());
        std::fs::read(out_dir.join("events.csv")).unwrap()
    };
    let config_seed = run("a", None, None);
    assert_eq!(run("b", None, Some("9")), config_seed);
    let env_seed = run("c", None, Some("5"));
    assert_ne!(env_seed, config_seed);
    assert_eq!(run("d", Some("5"), Some("77")), env_seed);
}

#[test]
fn infer_reads_simulated_events() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let out = hawkes(&["simulate", "--config", config.to_str().unwrap()], None);
    assert!(out.status.success());
    let events = dir.path().join("out/events.csv");
    let out = hawkes(
        &["infer", "--config", config.to_str().unwrap(), "--data", events.to_str().unwrap()],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["samples"], 16);
}
