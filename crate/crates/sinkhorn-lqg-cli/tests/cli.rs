//! End-to-end tests of the command-line interface: subcommands, file
//! formats, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sinkhorn_lqg::config::{RunConfig, ScalarOrPerStep};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sinkhorn-lqg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(output: &Output) -> serde_json::Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&output.stdout)
        )
    })
}

/// A small feasible instance: the shipped benchmark shrunk to a short
/// horizon with a loose gap tolerance and few samples.
fn small_config(horizon: usize) -> RunConfig {
    let mut config = RunConfig::benchmark();
    config.horizon = horizon;
    config.solver.tol_gap = 1e-2;
    config.simulation.samples = 400;
    config.simulation.seed = 11;
    config
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir =
            std::env::temp_dir().join(format!("sinkhorn-lqg-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn write_config(dir: &TempDir, name: &str, config: &RunConfig) -> PathBuf {
    let path = dir.path(name);
    std::fs::write(&path, config.to_json_pretty()).unwrap();
    path
}

fn config_arg(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

#[test]
fn check_reports_feasibility_per_block() {
    let dir = TempDir::new("check");
    let config_path = write_config(&dir, "config.json", &small_config(2));
    let output = run(&["check", "--config", &config_arg(&config_path)]);
    assert!(output.status.success(), "{output:?}");

    let report = stdout_json(&output);
    assert_eq!(report["feasible"], true);
    let blocks = report["blocks"].as_array().unwrap();
    assert_eq!(blocks.len(), 5); // x0 + 2 process + 2 measurement blocks
    assert_eq!(blocks[0]["block"], "x0");
    for block in blocks {
        assert!(block["rho_min_numeric"].as_f64().unwrap() > 0.0);
        assert!(block["rho_min_paper"].as_f64().is_some());
        assert_eq!(block["radius"].as_f64().unwrap(), 1000.0);
    }
    assert!(report["config_hash"].as_str().unwrap().len() == 16);
}

#[test]
fn check_rejects_zero_radius_with_regularization() {
    let dir = TempDir::new("check-infeasible");
    let mut config = small_config(1);
    config.ambiguity.rho_x0 = 0.0;
    config.ambiguity.rho_w = ScalarOrPerStep::One(0.0);
    config.ambiguity.rho_v = ScalarOrPerStep::One(0.0);
    let config_path = write_config(&dir, "config.json", &config);

    let output = run(&["check", "--config", &config_arg(&config_path)]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");

    // the same radii are feasible once the regularization vanishes
    let output = run(&[
        "check",
        "--config",
        &config_arg(&config_path),
        "--epsilon",
        "0",
    ]);
    assert!(output.status.success(), "{output:?}");
}

#[test]
fn synthesize_writes_certified_policy() {
    let dir = TempDir::new("synth");
    let config_path = write_config(&dir, "config.json", &small_config(2));
    let out_path = dir.path("policy.json");
    let output = run(&[
        "synthesize",
        "--config",
        &config_arg(&config_path),
        "--out",
        &config_arg(&out_path),
    ]);
    assert!(output.status.success(), "{output:?}");

    let policy: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(policy["converged"], true);
    assert!(policy["nash_gap"].as_f64().unwrap() >= -1e-8);
    assert_eq!(policy["U"].as_array().unwrap().len(), 4); // mT = 2*2 rows
    assert_eq!(policy["worst_case"]["W"].as_array().unwrap().len(), 2);
    assert_eq!(policy["solver"]["tol_gap"], 1e-2);
    let q: Vec<f64> = serde_json::from_value(policy["q"].clone()).unwrap();
    assert!(q.iter().all(|v| v.abs() <= 1e-9));
}

#[test]
fn synthesize_degenerate_ball_matches_nominal_design() {
    let dir = TempDir::new("synth-nominal");
    let mut config = small_config(1);
    config.ambiguity.epsilon = 0.0;
    config.ambiguity.rho_x0 = 0.0;
    config.ambiguity.rho_w = ScalarOrPerStep::One(0.0);
    config.ambiguity.rho_v = ScalarOrPerStep::One(0.0);
    let config_path = write_config(&dir, "config.json", &config);
    let out_path = dir.path("policy.json");
    let output = run(&[
        "synthesize",
        "--config",
        &config_arg(&config_path),
        "--out",
        &config_arg(&out_path),
    ]);
    assert!(output.status.success(), "{output:?}");

    let policy_file: sinkhorn_lqg::config::PolicyFile =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let resolved = config.resolve().unwrap();
    let (nominal, value) =
        sinkhorn_lqg::solver::nominal_lqg(&resolved.lifted, &resolved.ambiguity.nominal_blocks())
            .unwrap();
    let parsed = policy_file.to_policy(&resolved.lifted).unwrap();
    assert!((parsed.feedback() - nominal.feedback()).norm() <= 1e-9);
    assert!((policy_file.value - value).abs() <= 1e-9 * value.abs().max(1.0));
}

#[test]
fn simulate_is_reproducible_and_validates_policy() {
    let dir = TempDir::new("simulate");
    let config_path = write_config(&dir, "config.json", &small_config(2));
    let policy_path = dir.path("policy.json");
    let output = run(&[
        "synthesize",
        "--config",
        &config_arg(&config_path),
        "--out",
        &config_arg(&policy_path),
    ]);
    assert!(output.status.success());

    for (flag, sub) in [("nominal", "sim-nom"), ("worst-case", "sim-wc")] {
        let out_dir = dir.path(sub);
        let output = run(&[
            "simulate",
            "--config",
            &config_arg(&config_path),
            "--policy",
            &config_arg(&policy_path),
            "--distribution",
            flag,
            "--out-dir",
            &config_arg(&out_dir),
        ]);
        assert!(output.status.success(), "{flag}: {output:?}");
        let csv = std::fs::read_to_string(out_dir.join("costs.csv")).unwrap();
        assert!(csv.starts_with("sample_id,cost\n"));
        assert_eq!(csv.lines().count(), 401);
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
                .unwrap();
        for key in [
            "empirical_mean",
            "empirical_std",
            "theoretical_mean",
            "n",
            "seed",
            "bins",
            "config_hash",
        ] {
            assert!(summary.get(key).is_some(), "{flag}: missing {key}");
        }
        assert_eq!(summary["n"], 400);
    }

    // byte-identical rerun
    let rerun_dir = dir.path("sim-nom-rerun");
    let output = run(&[
        "simulate",
        "--config",
        &config_arg(&config_path),
        "--policy",
        &config_arg(&policy_path),
        "--distribution",
        "nominal",
        "--out-dir",
        &config_arg(&rerun_dir),
    ]);
    assert!(output.status.success());
    let first = std::fs::read(dir.path("sim-nom").join("costs.csv")).unwrap();
    let second = std::fs::read(rerun_dir.join("costs.csv")).unwrap();
    assert_eq!(first, second, "rerun changed the cost stream");

    // malformed policy file: break causality
    let mut policy: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&policy_path).unwrap()).unwrap();
    policy["U"][0][3] = serde_json::json!(0.7);
    let broken_path = dir.path("broken_policy.json");
    std::fs::write(&broken_path, serde_json::to_string(&policy).unwrap()).unwrap();
    let output = run(&[
        "simulate",
        "--config",
        &config_arg(&config_path),
        "--policy",
        &config_arg(&broken_path),
        "--distribution",
        "nominal",
        "--out-dir",
        &config_arg(&dir.path("sim-broken")),
    ]);
    assert_eq!(output.status.code(), Some(4), "{output:?}");
}

#[test]
fn compare_emits_verdict_grid() {
    let dir = TempDir::new("compare");
    let config_path = write_config(&dir, "config.json", &small_config(2));
    let out_dir = dir.path("cmp");
    let output = run(&[
        "compare",
        "--config",
        &config_arg(&config_path),
        "--out-dir",
        &config_arg(&out_dir),
    ]);
    assert!(output.status.success(), "{output:?}");

    for stem in [
        "dr_nominal",
        "dr_worst_case",
        "lqg_nominal",
        "lqg_worst_case",
    ] {
        assert!(
            out_dir.join(format!("{stem}.csv")).exists(),
            "missing {stem}.csv"
        );
        assert!(
            out_dir.join(format!("{stem}_summary.json")).exists(),
            "missing {stem} summary"
        );
    }
    let verdict: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("verdict.json")).unwrap())
            .unwrap();
    assert!(verdict["dr_better_worst_case"].is_boolean());
    assert!(verdict["lqg_better_nominal"].is_boolean());
    // with radii this wide the robust policy must win its own worst case
    assert_eq!(verdict["dr_better_worst_case"], true);
}

#[test]
fn compare_degenerate_ball_gives_identical_policies() {
    let dir = TempDir::new("compare-degenerate");
    let mut config = small_config(1);
    config.ambiguity.epsilon = 0.0;
    config.ambiguity.rho_x0 = 0.0;
    config.ambiguity.rho_w = ScalarOrPerStep::One(0.0);
    config.ambiguity.rho_v = ScalarOrPerStep::One(0.0);
    let config_path = write_config(&dir, "config.json", &config);
    let out_dir = dir.path("cmp");
    let output = run(&[
        "compare",
        "--config",
        &config_arg(&config_path),
        "--out-dir",
        &config_arg(&out_dir),
    ]);
    assert!(output.status.success(), "{output:?}");
    let verdict: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("verdict.json")).unwrap())
            .unwrap();
    // both policies coincide, so the four means collapse pairwise
    let means = &verdict["means"];
    let dr_nom = means["dr_nominal"].as_f64().unwrap();
    let lqg_nom = means["lqg_nominal"].as_f64().unwrap();
    assert!((dr_nom - lqg_nom).abs() <= 1e-9 * dr_nom.abs().max(1.0));
    let dr_wc = means["dr_worst_case"].as_f64().unwrap();
    let lqg_wc = means["lqg_worst_case"].as_f64().unwrap();
    assert!((dr_wc - lqg_wc).abs() <= 1e-9 * dr_wc.abs().max(1.0));
}

#[test]
fn synthesize_without_iterations_exits_three_with_partial_output() {
    let dir = TempDir::new("synth-noconv");
    let mut config = small_config(2);
    config.solver.max_iters = 0;
    let config_path = write_config(&dir, "config.json", &config);
    let out_path = dir.path("policy.json");
    let output = run(&[
        "synthesize",
        "--config",
        &config_arg(&config_path),
        "--out",
        &config_arg(&out_path),
    ]);
    assert_eq!(output.status.code(), Some(3), "{output:?}");
    let policy: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(policy["converged"], false);
}

#[test]
fn oracle_suite_passes_and_writes_report() {
    let dir = TempDir::new("oracle");
    let out_path = dir.path("report.json");
    let output = run(&["oracle", "--seed", "0", "--out", &config_arg(&out_path)]);
    assert!(output.status.success(), "{output:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let map = report.as_object().unwrap();
    assert!(map.len() >= 6);
    for (name, check) in map {
        assert_eq!(check["pass"], true, "oracle {name} failed: {check}");
        assert!(check["metric"].is_number());
        assert!(check["tolerance"].is_number());
    }
}

#[test]
fn bad_input_files_exit_four() {
    let dir = TempDir::new("bad-input");
    let output = run(&["check", "--config", "/nonexistent/config.json"]);
    assert_eq!(output.status.code(), Some(4));

    let garbage = dir.path("garbage.json");
    std::fs::write(&garbage, "{not json").unwrap();
    let output = run(&["check", "--config", &config_arg(&garbage)]);
    assert_eq!(output.status.code(), Some(4));
}

#[test]
fn epsilon_cap_is_enforced() {
    let dir = TempDir::new("eps-cap");
    let config_path = write_config(&dir, "config.json", &small_config(1));
    let output = run(&[
        "check",
        "--config",
        &config_arg(&config_path),
        "--epsilon",
        "2e6",
    ]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}

#[test]
fn shipped_benchmark_config_matches_the_builtin() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.json");
    let text = std::fs::read_to_string(path).unwrap();
    let parsed = RunConfig::from_json(&text).unwrap();
    assert_eq!(parsed, RunConfig::benchmark());
}
