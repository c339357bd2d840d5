use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use switchid_cli::config::{LoadedConfig, Overrides};
use switchid_cli::io::{read_json, write_json, HISTORY_COLUMNS, SURFACES_FORMAT};
use switchid_cli::{commands::true_model_file, Metrics};

fn bundled(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// The bundled oscillator shrunk to run in a second or two.
fn small_oscillator() -> Value {
    let mut cfg = bundled("sls_oscillator.json");
    cfg["sampling"]["num_samples"] = json!(150);
    cfg["evaluate"]["test_samples"] = json!(200);
    cfg["evaluate"]["rollouts"] = json!(2);
    cfg["evaluate"]["horizon"] = json!(2.0);
    cfg
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    path
}

fn switchid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_switchid")).args(args).arg("--quiet").output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(config: &Path, output: &Path) {
    ok(switchid(&["simulate", "--config", s(config), "--output", s(output)]));
}

fn identify(config: &Path, dataset: &Path, out_dir: &Path, extra: &[&str]) {
    let mut args = vec!["identify", "--config", s(config), "--dataset", s(dataset), "--output", s(out_dir)];
    args.extend_from_slice(extra);
    ok(switchid(&args));
}

/// Data rows of a CSV with `#` metadata lines dropped.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let idx = rows[0].iter().position(|h| h == name).unwrap();
    rows[1..].iter().map(|r| r[idx].clone()).collect()
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");

    let missing = switchid(&["simulate", "--config", s(&dir.path().join("nope.json")), "--output", s(&out)]);
    assert_eq!(missing.status.code(), Some(4));

    let mut cfg = small_oscillator();
    cfg["identify"]["relaxation"] = json!("simplex");
    let bad = write_config(dir.path(), "bad.json", &cfg);
    let invalid = switchid(&["simulate", "--config", s(&bad), "--output", s(&out)]);
    assert_eq!(invalid.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("relaxation"));

    let mut cfg = small_oscillator();
    cfg["sampling"]["unexpected"] = json!(1);
    let unknown = write_config(dir.path(), "unknown.json", &cfg);
    assert_eq!(switchid(&["simulate", "--config", s(&unknown), "--output", s(&out)]).status.code(), Some(2));

    let good = write_config(dir.path(), "good.json", &small_oscillator());
    std::fs::write(dir.path().join("broken.csv"), "z_1,z_2\n1,2\n").unwrap();
    let broken = switchid(&[
        "identify",
        "--config",
        s(&good),
        "--dataset",
        s(&dir.path().join("broken.csv")),
        "--output",
        s(dir.path()),
    ]);
    assert_eq!(broken.status.code(), Some(4));
}

#[test]
fn missing_seed_defaults_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let explicit = write_config(dir.path(), "explicit.json", &small_oscillator());
    let mut cfg = small_oscillator();
    cfg["sampling"].as_object_mut().unwrap().remove("seed");
    let implicit = write_config(dir.path(), "implicit.json", &cfg);

    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    simulate(&explicit, &a);
    simulate(&implicit, &b);
    assert_eq!(csv_rows(&a), csv_rows(&b));
    let meta = std::fs::read_to_string(&b).unwrap();
    assert!(meta.contains("# seed: 0"));
    assert!(meta.contains("# seed_source:"));
    assert!(!std::fs::read_to_string(&a).unwrap().contains("seed_source"));
}

#[test]
fn one_dimensional_system_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "system": {
            "degree": 1,
            "modes": [[[0.5, -1.0]], [[-0.5, -2.0]]],
            "surfaces": { "degree": 1, "coefficients": [[0.0, 1.0]] }
        },
        "sampling": { "scheme": "uniform_box", "lower": [-2.0], "upper": [2.0], "num_samples": 120, "noise_std": 0.0, "seed": 3 },
        "identify": { "modes": 2, "degree": 1 },
        "surface": { "degree": 1, "epsilon": 0.01, "beta": 0.01, "eta": 10.0 },
        "evaluate": { "test_samples": 200, "rollouts": 2, "dt": 0.01, "horizon": 1.0 }
    });
    let config = write_config(dir.path(), "line.json", &cfg);
    let data = dir.path().join("d.csv");
    simulate(&config, &data);
    assert_eq!(csv_rows(&data)[0], ["z_1", "zdot_1", "true_mode"]);
    identify(&config, &data, dir.path(), &[]);
    let surfaces = dir.path().join("surfaces.json");
    ok(switchid(&[
        "fit-surface",
        "--config",
        s(&config),
        "--dataset",
        s(&data),
        "--model",
        s(&dir.path().join("model.json")),
        "--output",
        s(&surfaces),
    ]));
    ok(switchid(&[
        "evaluate",
        "--config",
        s(&config),
        "--model",
        s(&dir.path().join("model.json")),
        "--surfaces",
        s(&surfaces),
        "--output",
        s(dir.path()),
    ]));
    let metrics: Metrics = read_json(&dir.path().join("metrics.json")).unwrap();
    assert!(metrics.mode_accuracy.unwrap() > 0.95, "{metrics:?}");
}

#[test]
fn single_mode_identification_stops_at_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_oscillator();
    cfg["system"] = json!({ "degree": 1, "modes": [[[0.0, 0.0, 1.0], [0.0, -1.0, -0.3]]] });
    cfg["identify"]["modes"] = json!(1);
    let config = write_config(dir.path(), "one.json", &cfg);
    let data = dir.path().join("d.csv");
    simulate(&config, &data);
    identify(&config, &data, dir.path(), &[]);
    let model: Value = read_json(&dir.path().join("model.json")).unwrap();
    assert_eq!(model["stop"], "fixed_point");
    assert!(model["iterations"].as_u64().unwrap() <= 2);
    assert!(model["final_cost"].as_f64().unwrap() < 1e-6);
}

#[test]
fn tightness_column_is_filled_only_for_sdp() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &small_oscillator());
    let data = dir.path().join("d.csv");
    simulate(&config, &data);
    let (lp, sdp) = (dir.path().join("lp"), dir.path().join("sdp"));
    std::fs::create_dir_all(&lp).unwrap();
    std::fs::create_dir_all(&sdp).unwrap();
    identify(&config, &data, &lp, &[]);
    identify(&config, &data, &sdp, &["--relaxation", "sdp"]);

    let lp_rows = csv_rows(&lp.join("history.csv"));
    let sdp_rows = csv_rows(&sdp.join("history.csv"));
    assert_eq!(lp_rows[0], HISTORY_COLUMNS);
    assert!(column(&lp_rows, "tightness_ratio").iter().all(String::is_empty));
    for t in column(&sdp_rows, "tightness_ratio") {
        let t: f64 = t.parse().unwrap();
        assert!((0.0..=1.0).contains(&t));
    }
    assert!(std::fs::read_to_string(sdp.join("history.csv")).unwrap().contains("# relaxation: sdp"));
}

#[test]
fn reruns_are_byte_identical_apart_from_timings() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &small_oscillator());
    let run = |tag: &str| {
        let out = dir.path().join(tag);
        std::fs::create_dir_all(&out).unwrap();
        let data = out.join("d.csv");
        simulate(&config, &data);
        identify(&config, &data, &out, &[]);
        ok(switchid(&[
            "fit-surface",
            "--config",
            s(&config),
            "--dataset",
            s(&data),
            "--model",
            s(&out.join("model.json")),
            "--output",
            s(&out.join("surfaces.json")),
        ]));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["d.csv", "model.json", "surfaces.json"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let untimed = |dir: &Path| -> Vec<Vec<String>> {
        csv_rows(&dir.join("history.csv")).into_iter().map(|r| r[..5].to_vec()).collect()
    };
    assert_eq!(untimed(&a), untimed(&b));
}

#[test]
fn true_model_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "c.json", &small_oscillator());
    let cfg = LoadedConfig::load(&config, Overrides::default()).unwrap();
    let model_path = dir.path().join("truth.json");
    write_json(&model_path, &true_model_file(&cfg).unwrap()).unwrap();
    let sha = cfg.sha256.clone();
    let surfaces = json!({
        "format": SURFACES_FORMAT,
        "config_sha256": sha,
        "seed": 0,
        "n": 2,
        "degree": 1,
        "modebook": [[1], [-1]],
        "coefficients": [[0.0, 1.0, 0.0]],
        "certificate_t": 0.0,
        "certificate_per_surface": [0.0],
        "admissible_epsilon": null,
        "epsilon": 0.0,
        "beta": 0.0,
        "eta": 0.0,
        "total_slack": 0.0,
        "l1_norms": [1.0],
        "objective": 0.0
    });
    let surfaces_path = write_config(dir.path(), "truth_surfaces.json", &surfaces);
    ok(switchid(&[
        "evaluate",
        "--config",
        s(&config),
        "--model",
        s(&model_path),
        "--surfaces",
        s(&surfaces_path),
        "--output",
        s(dir.path()),
    ]));
    let m: Metrics = read_json(&dir.path().join("metrics.json")).unwrap();
    assert_eq!(m.velocity_rmse, Some(0.0));
    assert_eq!(m.mode_accuracy, Some(1.0));
    assert_eq!(m.miou, Some(1.0));
    let r = m.rollout.unwrap();
    assert_eq!((r.completed, r.diverged), (2, 0));
    assert_eq!(r.rmse, Some(0.0));
    assert_eq!(r.max_error, Some(0.0));
    let rows = csv_rows(&dir.path().join("rollout_01.csv"));
    assert!(column(&rows, "error_norm").iter().all(|e| e.parse::<f64>().unwrap() == 0.0));
}
