use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use latreg_core::SyntheticSpec;
use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn latreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latreg")).args(args).output().unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let v: Value = serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("{e}: {text}"));
    v["error"].clone()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// One serial quickstart run shared by the tests below.
fn quickstart() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = configs().join("quickstart.json");
        let out = latreg(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dir
    })
    .path()
}

#[test]
fn bundled_spec_is_the_reference_world() {
    let text = std::fs::read_to_string(configs().join("reference_spec.json")).unwrap();
    let spec: SyntheticSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(spec, SyntheticSpec::reference());
}

#[test]
fn bundled_configs_load() {
    for name in ["quickstart.json", "reference.json"] {
        let l = latreg_cli::load(&configs().join(name), &Default::default()).unwrap();
        assert!(l.spec_path().exists(), "{name}");
    }
}

#[test]
fn quickstart_report_covers_the_full_grid() {
    let dir = quickstart();
    let text = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment,feature_kind,calibrator,n_train,repeats,mean_mae,std_mae,seed"
    );
    let grid: Vec<usize> = lines
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f[0] == "few_shot" && f[1] == "latent_distance")
        .map(|f| f[3].parse().unwrap())
        .collect();
    assert_eq!(grid, vec![2, 5, 10, 20, 100, 1000]);

    let manifest = read_json(&dir.join("manifest.json"));
    let stages = manifest["stages"].as_object().unwrap();
    assert_eq!(stages.len(), 8);
    for files in stages.values() {
        for f in files.as_array().unwrap() {
            assert!(dir.join(f.as_str().unwrap()).exists(), "{f}");
        }
    }
    let version = manifest["version"].as_str().unwrap();
    assert!(version.starts_with(env!("CARGO_PKG_VERSION")));
    for f in ["boundary.json", "scores.json", "report.json", "sort.json"] {
        let v = read_json(&dir.join(f));
        assert_eq!(v["version"], version, "{f}");
        assert_eq!(v["run_config"], manifest["run_config"], "{f}");
    }
}

#[test]
fn worker_threads_match_serial_output() {
    let serial = quickstart();
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("quickstart.json");
    let out = latreg(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--workers", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.csv", "ablation.csv", "sort.csv", "inversion_report.csv"] {
        let a = std::fs::read_to_string(serial.join(f)).unwrap();
        let b = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(a.lines().count(), b.lines().count());
        for (la, lb) in a.lines().zip(b.lines()) {
            for (x, y) in la.split(',').zip(lb.split(',')) {
                match (x.parse::<f64>(), y.parse::<f64>()) {
                    (Ok(x), Ok(y)) => assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{f}: {x} vs {y}"),
                    _ => assert_eq!(x, y),
                }
            }
        }
    }
}

fn small_config(dir: &Path) -> PathBuf {
    std::fs::copy(configs().join("reference_spec.json"), dir.join("world.json")).unwrap();
    let path = dir.join("run.json");
    std::fs::write(
        &path,
        r#"{"seed": 5, "spec": "world.json", "out": "ignored", "data": {"train_size": 200, "pool_size": 300}}"#,
    )
    .unwrap();
    path
}

#[test]
fn evaluate_without_boundary_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let (c, o) = (cfg.to_str().unwrap(), out_dir.to_str().unwrap());
    assert!(latreg(&["gen-data", "--config", c, "--out", o]).status.success());
    let out = latreg(&["evaluate", "--config", c, "--out", o]);
    assert!(!out.status.success());
    let err = error_json(&out);
    assert_eq!(err["kind"], "missing_input");
    assert_eq!(err["stage"], "evaluate");
    assert!(err["message"].as_str().unwrap().contains("boundary.json"), "{err}");
}

#[test]
fn missing_config_and_spec_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let absent = dir.path().join("nope.json");
    let out = latreg(&["gen-data", "--config", absent.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = error_json(&out);
    assert_eq!(err["kind"], "missing_input");
    assert!(err["message"].as_str().unwrap().contains("nope.json"));

    let cfg = small_config(dir.path());
    std::fs::remove_file(dir.path().join("world.json")).unwrap();
    let o = dir.path().join("out");
    let out = latreg(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    let err = error_json(&out);
    assert_eq!((err["kind"].as_str(), err["stage"].as_str()), (Some("missing_input"), Some("gen-data")));
    assert!(err["message"].as_str().unwrap().contains("world.json"));
}

#[test]
fn schema_violations_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let c = cfg.to_str().unwrap();
    for set in ["evaluation.repeets=3", "seed=\"abc\"", "data.train_size=1"] {
        let out = latreg(&["gen-data", "--config", c, "--set", set]);
        assert!(!out.status.success(), "{set}");
        assert_eq!(error_json(&out)["kind"], "config", "{set}");
    }
    let out = latreg(&["gen-data", "--config", c, "--set", "novalue"]);
    assert_eq!(error_json(&out)["kind"], "usage");
    let out = latreg(&["frobnicate"]);
    assert_eq!(error_json(&out)["kind"], "usage");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overrides_are_echoed_in_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = dir.path().join("out");
    let out = latreg(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "seed=11",
        "--set",
        "evaluation.repeats=7",
        "--seed",
        "12",
        "--out",
        o.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo = &read_json(&o.join("manifest.json"))["run_config"];
    assert_eq!(echo["seed"], 12);
    assert_eq!(echo["evaluation"]["repeats"], 7);
    assert_eq!(echo["out"], o.to_str().unwrap());
    assert_eq!(echo["parallelism"], serde_json::json!({"mode": "workers", "count": 2}));
    assert_eq!(echo["importance"]["seed"], latreg_core::seed::derive_named(12, "importance"));
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn help_and_version_exit_cleanly() {
    let out = latreg(&["--version"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
    let out = latreg(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("pipeline"));
}
