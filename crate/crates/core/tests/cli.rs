use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::Command;
use steproute::rl::{FeatureScale, PolicyNet};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn steproute(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_steproute")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// `[1, 1]` network that regenerates exactly when the current score is below 0.5.
fn half_threshold_net() -> PolicyNet {
    let mut params = vec![0.0; 13];
    params[0] = -10.0; // w1 on current score
    params[4] = 5.0; // b1
    params[5] = 1.0; // w2
    params[8] = 1.0; // wa, regenerate row
    PolicyNet { hidden: [1, 1], scale: FeatureScale::default(), params }
}

#[test]
fn sweep_writes_curve_report_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", r#"{"episodes": 300}"#);
    let out = tmp.path().join("sweep");
    let (code, err) = steproute(&["sweep-thr", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("control,mean_strong_tokens,normalized_cost,accuracy,n_queries"));
    assert!(lines.count() >= 2);

    let manifest = read_json(out.join("manifest.json"));
    assert_eq!(manifest["command"], "sweep-thr");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["episodes"], 300);
    for f in ["curve.csv", "report.json", "evaluations.json", "config.json"] {
        assert_eq!(manifest["files"][f].as_str().map(str::len), Some(64), "{f}");
    }
    // The saved config reruns to the same bytes.
    let rerun = tmp.path().join("rerun");
    let saved = out.join("config.json");
    let (code, err) = steproute(&["sweep-thr", "--config", saved.to_str().unwrap(), "--out", rerun.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(std::fs::read(rerun.join("curve.csv")).unwrap(), csv.as_bytes());
    assert!(!tmp.path().join(".sweep.staging").exists());
}

#[test]
fn eleven_point_ladder_gives_eleven_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.json",
        r#"{"episodes": 300, "env": {"p_weak": 0.6, "p_strong": 0.95, "noise": {"mode": "extra_variance", "scale": 0.15}}}"#,
    );
    let out = tmp.path().join("o");
    let (code, err) = steproute(&["sweep-thr", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 11);
    let evals = read_json(out.join("evaluations.json"));
    assert_eq!(evals.as_array().unwrap().len(), 2 + 11);
}

#[test]
fn config_errors_exit_one_with_a_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();

    let cfg = write(tmp.path(), "bad.json", r#"{"threshold": {"ladder": [0.2, 1.5]}}"#);
    let (code, err) = steproute(&["sweep-thr", "--config", &cfg, "--out", out]);
    assert_eq!(code, 1);
    assert!(err.contains("threshold.ladder[1]"), "{err}");

    let cfg = write(tmp.path(), "typo.json", r#"{"episods": 10}"#);
    let (code, err) = steproute(&["sweep-thr", "--config", &cfg, "--out", out]);
    assert_eq!(code, 1);
    assert!(err.contains("episods"), "{err}");

    let cfg = write(tmp.path(), "type.json", r#"{"train": {"ppo": {"clip": "wide"}}}"#);
    let (code, err) = steproute(&["train-agg", "--config", &cfg, "--out", out]);
    assert_eq!(code, 1);
    assert!(err.contains("train.ppo.clip"), "{err}");

    let cfg = write(tmp.path(), "ok.json", "{}");
    assert_eq!(steproute(&["eval", "--config", &cfg, "--out", out]).0, 1);
    assert_eq!(steproute(&["solve-pomdp", "--config", &cfg, "--out", out]).0, 1);
    assert_eq!(steproute(&["sweep-thr", "--config", &cfg, "--out", out, "--episodes", "0"]).0, 1);
    assert_eq!(steproute(&["sweep-thr", "--config", &cfg]).0, 1);
    assert_eq!(steproute(&["sweep-thr", "--config", "/nonexistent/run.json", "--out", out]).0, 1);
    assert_eq!(steproute(&["frobnicate"]).0, 1);
    assert_eq!(steproute(&["--help"]).0, 0);
    assert!(!Path::new(out).exists());
}

#[test]
fn runtime_errors_exit_two_and_leave_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = write(tmp.path(), "run.json", r#"{"corpus": "missing.jsonl"}"#);
    let (code, err) = steproute(&["replay", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("missing.jsonl"), "{err}");
    assert!(!out.exists());
    assert!(!tmp.path().join(".o.staging").exists());

    let cfg = write(
        tmp.path(),
        "agg.json",
        r#"{"episodes": 10, "policies": [{"kind": "agg", "checkpoint": "nope.json", "control": 0.1}]}"#,
    );
    assert_eq!(steproute(&["eval", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 2);
}

#[test]
fn eval_on_fixture_corpus_with_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "agg.json", &half_threshold_net().save_json());
    let cfg = write(
        tmp.path(),
        "eval.json",
        &format!(
            r#"{{
  "corpus": "{}",
  "policies": [
    {{"kind": "agg", "checkpoint": "agg.json", "control": 0.5}},
    {{"kind": "threshold", "k": 0.5}}
  ]
}}"#,
            fixture("tiny_corpus.jsonl").display()
        ),
    );
    let out = tmp.path().join("eval");
    let (code, err) = steproute(&["eval", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");

    // q1 swaps its second step (40 tokens) and is solved; q2 swaps its first
    // step (25 tokens) for a wrong expensive step.
    let evals = read_json(out.join("evaluations.json"));
    let rows = evals.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for row in &rows[2..] {
        assert_eq!(row["accuracy"], 0.5);
        assert_eq!(row["mean_strong_tokens"], 32.5);
    }
    assert_eq!(rows[0]["accuracy"], 0.0);
    assert_eq!(rows[1]["mean_strong_tokens"], 65.0);

    let report = read_json(out.join("report.json"));
    assert_eq!(report["pgr_endpoints"]["r_weak"], 0.0);
    assert_eq!(report["pgr_endpoints"]["r_strong"], 0.5);
    // One frontier point at full PGR for half the cost.
    for x in ["50", "80", "95"] {
        assert_eq!(report["cpt"][x]["cost_abs"], 32.5, "cpt {x}");
        assert_eq!(report["cpt"][x]["cost_norm"], 0.5, "cpt {x}");
    }
    assert_eq!(report["ibc_delta"]["mean"], 1.0);
}

#[test]
fn replay_sweeps_thresholds_over_the_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "replay.json",
        &format!(r#"{{"corpus": "{}", "threshold": {{"ladder": [0.0, 0.5, 1.0]}}}}"#, fixture("tiny_corpus.jsonl").display()),
    );
    let out = tmp.path().join("replay");
    let (code, err) = steproute(&["replay", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let summary = read_json(out.join("summary.json"));
    assert_eq!(summary["traces"], 4);
    assert_eq!(summary["queries"], 2);
    assert_eq!(summary["weak_step_accuracy"], 0.5);
    assert_eq!(summary["strong_step_accuracy"], 0.75);
    // Weak minimum scores 0.2 and 0.3, both traces wrong.
    assert!(summary["min_score_auc"].is_null());
}

#[test]
fn fitted_model_feeds_a_belief_space_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "fit.json", r#"{"fit": {"episodes": 300}}"#);
    let fit = tmp.path().join("fit");
    let (code, err) = steproute(&["fit-obs", "--config", &cfg, "--out", fit.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let summary = read_json(fit.join("fit_summary.json"));
    assert_eq!(summary["source"], "simulator");
    assert!(summary["samples"].as_array().unwrap().iter().all(|n| n.as_u64().unwrap() > 0));

    let cfg = write(
        tmp.path(),
        "eval.json",
        &format!(
            r#"{{
  "episodes": 200,
  "policies": [
    {{"kind": "pomdp", "model": "{}", "lambda": 0.0005}},
    {{"kind": "automix", "lambda": 0.0005, "calibration_episodes": 200}},
    {{"kind": "always_continue"}}
  ]
}}"#,
            fit.join("obs_model.json").display()
        ),
    );
    let out = tmp.path().join("eval");
    let (code, err) = steproute(&["eval", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let evals = read_json(out.join("evaluations.json"));
    assert_eq!(evals.as_array().unwrap().len(), 5);
}

#[test]
fn solve_pomdp_writes_lookup_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "solve.json",
        r#"{"episodes": 100, "lambdas": [0.0001, 0.001], "fit": {"episodes": 200}, "pomdp": {"lookup_resolution": 10}}"#,
    );
    let out = tmp.path().join("solve");
    let (code, err) = steproute(&["solve-pomdp", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    for f in ["lookup_0.json", "lookup_1.json", "obs_model.json", "curve.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}
