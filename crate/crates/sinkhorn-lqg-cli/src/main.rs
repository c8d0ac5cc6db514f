//! Command-line front end: feasibility checks, policy synthesis, Monte
//! Carlo simulation, nominal-vs-robust comparison, and the oracle suite.
//!
//! Exit codes are a stable contract: 0 success, 2 infeasible ambiguity,
//! 3 solver non-convergence, 4 bad input file, 5 oracle failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sinkhorn_lqg::config::{PolicyFile, ResolvedProblem, RunConfig, ScalarOrPerStep};
use sinkhorn_lqg::error::Error;
use sinkhorn_lqg::oracles::{report_passes, run_oracle_suite};
use sinkhorn_lqg::simulation::{run_plan, CostSummary};
use sinkhorn_lqg::solver::{nominal_lqg, solve_game, worst_case_for_policy, GameSolution};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NO_CONVERGENCE: u8 = 3;
const EXIT_BAD_INPUT: u8 = 4;
const EXIT_ORACLE_FAILURE: u8 = 5;

#[derive(Parser)]
#[command(
    name = "sinkhorn-lqg",
    about = "Distributionally robust LQG synthesis over Sinkhorn ambiguity sets",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Scalar overrides applied on top of the config file; everything else
/// (matrices in particular) lives in the file.
#[derive(Args, Clone, Copy)]
struct Overrides {
    /// Override the entropic regularization strength.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Override every ambiguity radius with one value.
    #[arg(long)]
    rho: Option<f64>,
    /// Override the simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the Monte Carlo sample count.
    #[arg(long)]
    samples: Option<usize>,
    /// Override the solver's relative duality-gap tolerance.
    #[arg(long = "tol-gap")]
    tol_gap: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistributionFlag {
    Nominal,
    #[value(name = "worst-case")]
    WorstCase,
}

#[derive(Subcommand)]
enum Command {
    /// Validate every ambiguity ball of a config: reports the minimal
    /// feasible radius (numeric and closed-form) per block.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Solve the robust game and write the policy file.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        /// Output policy JSON path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Roll out a policy file under the nominal or its worst-case noise.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Policy JSON produced by `synthesize`.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_enum, default_value = "nominal")]
        distribution: DistributionFlag,
        /// Directory for costs.csv and summary.json.
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Synthesize both the robust and the nominal controller and simulate
    /// each under the nominal and its own worst-case distribution.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Directory for the four cost summaries and verdict.json.
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the independent verification oracles.
    Oracle {
        /// Optional config; only its seed is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Optional path for the JSON report (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn classify(err: Error) -> Failure {
    let code = match &err {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::NoConvergence { .. } | Error::BracketFailure(_) => EXIT_NO_CONVERGENCE,
        _ => 1,
    };
    Failure::new(code, err.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_BAD_INPUT, format!("cannot read {path:?}: {e}")))?;
    let mut config = RunConfig::from_json(&text)
        .map_err(|e| Failure::new(EXIT_BAD_INPUT, format!("cannot parse {path:?}: {e}")))?;
    if let Some(epsilon) = overrides.epsilon {
        config.ambiguity.epsilon = epsilon;
    }
    if let Some(rho) = overrides.rho {
        config.ambiguity.rho_x0 = rho;
        config.ambiguity.rho_w = ScalarOrPerStep::One(rho);
        config.ambiguity.rho_v = ScalarOrPerStep::One(rho);
    }
    if let Some(seed) = overrides.seed {
        config.simulation.seed = seed;
    }
    if let Some(samples) = overrides.samples {
        config.simulation.samples = samples;
    }
    if let Some(tol_gap) = overrides.tol_gap {
        config.solver.tol_gap = tol_gap;
    }
    Ok(config)
}

fn resolve(config: &RunConfig) -> Result<ResolvedProblem, Failure> {
    config.resolve().map_err(classify)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Failure::new(1, format!("cannot create {parent:?}: {e}")))?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| Failure::new(1, format!("cannot write {path:?}: {e}")))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Check { config, overrides } => cmd_check(&config, &overrides),
        Command::Synthesize {
            config,
            out,
            overrides,
        } => cmd_synthesize(&config, &out, &overrides),
        Command::Simulate {
            config,
            policy,
            distribution,
            out_dir,
            overrides,
        } => cmd_simulate(&config, &policy, distribution, &out_dir, &overrides),
        Command::Compare {
            config,
            out_dir,
            overrides,
        } => cmd_compare(&config, &out_dir, &overrides),
        Command::Oracle { config, seed, out } => {
            cmd_oracle(config.as_deref(), seed, out.as_deref())
        }
    }
}

fn cmd_check(config_path: &Path, overrides: &Overrides) -> Result<(), Failure> {
    let config = load_config(config_path, overrides)?;
    let resolved = resolve(&config)?;
    let reports = resolved.ambiguity.validate_all().map_err(classify)?;
    let all_feasible = reports.iter().all(|(_, r)| r.feasible);
    let blocks: Vec<_> = reports
        .iter()
        .map(|(label, report)| {
            json!({
                "block": label,
                "feasible": report.feasible,
                "rho_min_numeric": report.rho_min_numeric,
                "rho_min_paper": report.rho_min_paper,
                "radius": report.radius,
            })
        })
        .collect();
    let output = json!({
        "config_hash": resolved.config_hash,
        "feasible": all_feasible,
        "blocks": blocks,
    });
    println!("{}", serde_json::to_string_pretty(&output).unwrap());
    if all_feasible {
        Ok(())
    } else {
        let bad: Vec<&str> = reports
            .iter()
            .filter(|(_, r)| !r.feasible)
            .map(|(label, _)| label.as_str())
            .collect();
        Err(Failure::new(
            EXIT_INFEASIBLE,
            format!("infeasible ambiguity blocks: {}", bad.join(", ")),
        ))
    }
}

fn synthesize_solution(resolved: &ResolvedProblem) -> Result<GameSolution, Failure> {
    for (label, report) in resolved.ambiguity.validate_all().map_err(classify)? {
        if !report.feasible {
            return Err(Failure::new(
                EXIT_INFEASIBLE,
                format!(
                    "block {label}: radius {} below minimal radius {}",
                    report.radius, report.rho_min_numeric
                ),
            ));
        }
    }
    solve_game(&resolved.lifted, &resolved.ambiguity, &resolved.solver).map_err(classify)
}

fn cmd_synthesize(config_path: &Path, out: &Path, overrides: &Overrides) -> Result<(), Failure> {
    let config = load_config(config_path, overrides)?;
    let resolved = resolve(&config)?;
    let solution = synthesize_solution(&resolved)?;
    let file = PolicyFile::from_solution(&solution, &resolved.solver, &resolved.config_hash);
    write_file(out, &serde_json::to_string_pretty(&file).unwrap())?;
    let status = json!({
        "out": out,
        "value": solution.value,
        "nash_gap": solution.nash_gap,
        "iterations": solution.iterations,
        "converged": solution.converged,
        "config_hash": resolved.config_hash,
    });
    println!("{}", serde_json::to_string_pretty(&status).unwrap());
    if solution.converged {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_NO_CONVERGENCE,
            format!(
                "gap {} above tolerance after {} iterations; partial policy written to {out:?}",
                solution.nash_gap, solution.iterations
            ),
        ))
    }
}

fn write_summary(
    out_dir: &Path,
    stem: &str,
    summary: &CostSummary,
    config_hash: &str,
) -> Result<(), Failure> {
    write_file(&out_dir.join(format!("{stem}.csv")), &summary.costs_csv())?;
    write_file(
        &out_dir.join(format!("{stem}_summary.json")),
        &serde_json::to_string_pretty(&summary.summary_json(config_hash)).unwrap(),
    )
}

fn cmd_simulate(
    config_path: &Path,
    policy_path: &Path,
    distribution: DistributionFlag,
    out_dir: &Path,
    overrides: &Overrides,
) -> Result<(), Failure> {
    let config = load_config(config_path, overrides)?;
    let resolved = resolve(&config)?;
    let policy_text = std::fs::read_to_string(policy_path)
        .map_err(|e| Failure::new(EXIT_BAD_INPUT, format!("cannot read {policy_path:?}: {e}")))?;
    let policy_file: PolicyFile = serde_json::from_str(&policy_text)
        .map_err(|e| Failure::new(EXIT_BAD_INPUT, format!("cannot parse {policy_path:?}: {e}")))?;
    let policy = policy_file
        .to_policy(&resolved.lifted)
        .map_err(|e| Failure::new(EXIT_BAD_INPUT, format!("invalid policy: {e}")))?;

    let blocks = match distribution {
        DistributionFlag::Nominal => resolved.ambiguity.nominal_blocks(),
        DistributionFlag::WorstCase => {
            let (blocks, _) = worst_case_for_policy(
                &resolved.lifted,
                &policy,
                &resolved.ambiguity,
                &resolved.solver,
            )
            .map_err(classify)?;
            blocks
        }
    };
    let summary = run_plan(&resolved.lifted, &policy, &blocks, &resolved.plan).map_err(classify)?;
    write_summary(out_dir, "costs", &summary, &resolved.config_hash)?;
    // keep the bare names next to the suffixed ones for the common case
    std::fs::rename(
        out_dir.join("costs_summary.json"),
        out_dir.join("summary.json"),
    )
    .map_err(|e| Failure::new(1, format!("cannot finalize summary: {e}")))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary.summary_json(&resolved.config_hash)).unwrap()
    );
    Ok(())
}

fn cmd_compare(config_path: &Path, out_dir: &Path, overrides: &Overrides) -> Result<(), Failure> {
    let config = load_config(config_path, overrides)?;
    let resolved = resolve(&config)?;
    let robust = synthesize_solution(&resolved)?;
    let (classical_policy, _) =
        nominal_lqg(&resolved.lifted, &resolved.ambiguity.nominal_blocks()).map_err(classify)?;

    let nominal_blocks = resolved.ambiguity.nominal_blocks();
    let (robust_worst, _) = worst_case_for_policy(
        &resolved.lifted,
        &robust.policy,
        &resolved.ambiguity,
        &resolved.solver,
    )
    .map_err(classify)?;
    let (classical_worst, _) = worst_case_for_policy(
        &resolved.lifted,
        &classical_policy,
        &resolved.ambiguity,
        &resolved.solver,
    )
    .map_err(classify)?;

    let runs = [
        ("dr_nominal", &robust.policy, &nominal_blocks),
        ("dr_worst_case", &robust.policy, &robust_worst),
        ("lqg_nominal", &classical_policy, &nominal_blocks),
        ("lqg_worst_case", &classical_policy, &classical_worst),
    ];
    let mut means = std::collections::BTreeMap::new();
    for (stem, policy, blocks) in runs {
        let summary =
            run_plan(&resolved.lifted, policy, blocks, &resolved.plan).map_err(classify)?;
        means.insert(stem.to_string(), summary.empirical_mean);
        write_summary(out_dir, stem, &summary, &resolved.config_hash)?;
    }

    let robust_file = PolicyFile::from_solution(&robust, &resolved.solver, &resolved.config_hash);
    write_file(
        &out_dir.join("dr_policy.json"),
        &serde_json::to_string_pretty(&robust_file).unwrap(),
    )?;

    let verdict = json!({
        "dr_better_worst_case": means["dr_worst_case"] < means["lqg_worst_case"],
        "lqg_better_nominal": means["lqg_nominal"] < means["dr_nominal"],
        "means": means,
        "config_hash": resolved.config_hash,
    });
    let verdict_text = serde_json::to_string_pretty(&verdict).unwrap();
    write_file(&out_dir.join("verdict.json"), &verdict_text)?;
    println!("{verdict_text}");
    Ok(())
}

fn cmd_oracle(
    config_path: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let seed = match (seed, config_path) {
        (Some(s), _) => s,
        (None, Some(path)) => {
            let overrides = Overrides {
                epsilon: None,
                rho: None,
                seed: None,
                samples: None,
                tol_gap: None,
            };
            load_config(path, &overrides)?.simulation.seed
        }
        (None, None) => 0,
    };
    let report = run_oracle_suite(seed).map_err(classify)?;
    let text = serde_json::to_string_pretty(&report).unwrap();
    if let Some(path) = out {
        write_file(path, &text)?;
    }
    println!("{text}");
    if report_passes(&report) {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .iter()
            .filter(|(_, c)| !c.pass)
            .map(|(name, _)| name.as_str())
            .collect();
        Err(Failure::new(
            EXIT_ORACLE_FAILURE,
            format!("failed oracle checks: {}", failed.join(", ")),
        ))
    }
}
