//! Run configuration: the JSON schema consumed by the command-line tools.
//!
//! A config file carries the system and cost matrices (a single matrix
//! broadcasts across all stages; a list gives one matrix per stage), the
//! nominal and reference covariances, the ambiguity radii and
//! regularization, solver options, and the Monte Carlo plan. Matrices are
//! row-major nested arrays throughout.
//!
//! Every output file produced from a config embeds
//! [`RunConfig::config_hash`], the FNV-1a digest of the resolved
//! configuration, so runs can be traced back to their exact inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergences::AmbiguitySpec;
use crate::error::{Error, Result};
use crate::lifted::{LiftedSystem, Policy, SystemSpec};
use crate::simulation::SimulationPlan;
use crate::solver::{CovarianceBlocks, GameAmbiguity, GameSolution, SolverOptions};
use crate::spd::{matrix_from_rows, matrix_to_rows, SpdMatrix};

/// A matrix field that is either broadcast across every stage or listed
/// stage by stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixOrPerStep {
    One(Vec<Vec<f64>>),
    PerStep(Vec<Vec<Vec<f64>>>),
}

impl MatrixOrPerStep {
    fn resolve(&self, horizon: usize, what: &str) -> Result<Vec<DMatrix<f64>>> {
        match self {
            Self::One(rows) => Ok(vec![matrix_from_rows(rows)?; horizon]),
            Self::PerStep(list) => {
                if list.len() != horizon {
                    return Err(Error::DimMismatch(format!(
                        "{what}: expected {horizon} per-stage matrices, got {}",
                        list.len()
                    )));
                }
                list.iter().map(|rows| matrix_from_rows(rows)).collect()
            }
        }
    }

    fn resolve_spd(&self, horizon: usize, what: &str) -> Result<Vec<SpdMatrix>> {
        self.resolve(horizon, what)?
            .into_iter()
            .map(SpdMatrix::new)
            .collect()
    }
}

/// A scalar field that is either broadcast or listed per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrPerStep {
    One(f64),
    PerStep(Vec<f64>),
}

impl ScalarOrPerStep {
    fn resolve(&self, horizon: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            Self::One(v) => Ok(vec![*v; horizon]),
            Self::PerStep(list) => {
                if list.len() != horizon {
                    return Err(Error::DimMismatch(format!(
                        "{what}: expected {horizon} per-stage values, got {}",
                        list.len()
                    )));
                }
                Ok(list.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSection {
    pub a: MatrixOrPerStep,
    pub b: MatrixOrPerStep,
    pub c: MatrixOrPerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSection {
    pub q: MatrixOrPerStep,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_terminal: Option<Vec<Vec<f64>>>,
    pub r: MatrixOrPerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalSection {
    pub x0: Vec<Vec<f64>>,
    pub w: MatrixOrPerStep,
    pub v: MatrixOrPerStep,
}

/// Reference covariances of the regularizing Gaussian measure; identity by
/// default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<MatrixOrPerStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<MatrixOrPerStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySection {
    pub epsilon: f64,
    pub rho_x0: f64,
    pub rho_w: ScalarOrPerStep,
    pub rho_v: ScalarOrPerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSection {
    pub samples: usize,
    pub seed: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            samples: 5000,
            seed: 42,
        }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: usize,
    pub system: SystemSection,
    pub cost: CostSection,
    pub nominal: NominalSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSection>,
    pub ambiguity: AmbiguitySection,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub simulation: SimulationSection,
}

/// Everything a command needs, resolved from a [`RunConfig`].
pub struct ResolvedProblem {
    pub system: SystemSpec,
    pub lifted: LiftedSystem,
    pub ambiguity: GameAmbiguity,
    pub plan: SimulationPlan,
    pub solver: SolverOptions,
    pub config_hash: String,
}

impl RunConfig {
    pub fn from_json(json: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// FNV-1a digest of the canonical serialized config.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes.bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }

    /// Builds the lifted system, ambiguity balls, and simulation plan.
    pub fn resolve(&self) -> Result<ResolvedProblem> {
        let horizon = self.horizon;
        if horizon == 0 {
            return Err(Error::DimMismatch("horizon must be at least 1".into()));
        }
        let a = self.system.a.resolve(horizon, "system.a")?;
        let b = self.system.b.resolve(horizon, "system.b")?;
        let c = self.system.c.resolve(horizon, "system.c")?;

        let mut q = self.cost.q.resolve_spd(horizon, "cost.q")?;
        let q_terminal = match (&self.cost.q_terminal, &self.cost.q) {
            (Some(rows), _) => SpdMatrix::new(matrix_from_rows(rows)?)?,
            (None, MatrixOrPerStep::One(rows)) => SpdMatrix::new(matrix_from_rows(rows)?)?,
            (None, MatrixOrPerStep::PerStep(_)) => {
                return Err(Error::DimMismatch(
                    "cost.q_terminal is required when cost.q is per-stage".into(),
                ))
            }
        };
        q.push(q_terminal);
        let r = self.cost.r.resolve_spd(horizon, "cost.r")?;

        let system = SystemSpec::new(a, b, c, q, r)?;
        let lifted = LiftedSystem::new(&system)?;
        let (d, p) = (system.state_dim(), system.output_dim());

        let nominal_x0 = SpdMatrix::new(matrix_from_rows(&self.nominal.x0)?)?;
        let nominal_w = self.nominal.w.resolve_spd(horizon, "nominal.w")?;
        let nominal_v = self.nominal.v.resolve_spd(horizon, "nominal.v")?;

        let reference = self.reference.clone().unwrap_or_default();
        let ref_x0 = match &reference.x0 {
            Some(rows) => SpdMatrix::new(matrix_from_rows(rows)?)?,
            None => SpdMatrix::identity(d),
        };
        let ref_w = match &reference.w {
            Some(field) => field.resolve_spd(horizon, "reference.w")?,
            None => vec![SpdMatrix::identity(d); horizon],
        };
        let ref_v = match &reference.v {
            Some(field) => field.resolve_spd(horizon, "reference.v")?,
            None => vec![SpdMatrix::identity(p); horizon],
        };

        let eps = self.ambiguity.epsilon;
        let rho_w = self.ambiguity.rho_w.resolve(horizon, "ambiguity.rho_w")?;
        let rho_v = self.ambiguity.rho_v.resolve(horizon, "ambiguity.rho_v")?;
        let ambiguity = GameAmbiguity {
            x0: AmbiguitySpec::new(nominal_x0, ref_x0, self.ambiguity.rho_x0, eps)?,
            w: nominal_w
                .into_iter()
                .zip(ref_w)
                .zip(&rho_w)
                .map(|((center, reference), &rho)| AmbiguitySpec::new(center, reference, rho, eps))
                .collect::<Result<_>>()?,
            v: nominal_v
                .into_iter()
                .zip(ref_v)
                .zip(&rho_v)
                .map(|((center, reference), &rho)| AmbiguitySpec::new(center, reference, rho, eps))
                .collect::<Result<_>>()?,
        };
        ambiguity.check_dims(&lifted)?;

        let plan = SimulationPlan::new(self.simulation.samples, self.simulation.seed)?;
        Ok(ResolvedProblem {
            system,
            lifted,
            ambiguity,
            plan,
            solver: self.solver,
            config_hash: self.config_hash(),
        })
    }

    /// The shipped benchmark: an open-loop unstable two-state system with
    /// identity measurements, horizon 25, unit nominal covariances, wide
    /// ambiguity balls (`rho = 1000`, `epsilon = 1`), and 5000-sample runs.
    pub fn benchmark() -> Self {
        let identity2 = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        Self {
            horizon: 25,
            system: SystemSection {
                a: MatrixOrPerStep::One(vec![vec![1.1, 0.1], vec![0.0, 1.1]]),
                b: MatrixOrPerStep::One(identity2.clone()),
                c: MatrixOrPerStep::One(identity2.clone()),
            },
            cost: CostSection {
                q: MatrixOrPerStep::One(identity2.clone()),
                q_terminal: None,
                r: MatrixOrPerStep::One(vec![vec![1e-3, 0.0], vec![0.0, 1e-3]]),
            },
            nominal: NominalSection {
                x0: identity2.clone(),
                w: MatrixOrPerStep::One(identity2.clone()),
                v: MatrixOrPerStep::One(identity2),
            },
            reference: None,
            ambiguity: AmbiguitySection {
                epsilon: 1.0,
                rho_x0: 1e3,
                rho_w: ScalarOrPerStep::One(1e3),
                rho_v: ScalarOrPerStep::One(1e3),
            },
            solver: SolverOptions {
                tol_gap: 1e-3,
                max_iters: 2000,
                ..SolverOptions::default()
            },
            simulation: SimulationSection::default(),
        }
    }
}

/// Wire format of a synthesized policy with its certificate and the
/// worst-case covariance blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    #[serde(rename = "U")]
    pub feedback: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub value: f64,
    pub nash_gap: f64,
    pub worst_case: WorstCaseFile,
    pub solver: SolverOptions,
    pub converged: bool,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorstCaseFile {
    #[serde(rename = "X0")]
    pub x0: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<Vec<f64>>>,
}

impl PolicyFile {
    pub fn from_solution(
        solution: &GameSolution,
        solver: &SolverOptions,
        config_hash: &str,
    ) -> Self {
        Self {
            feedback: matrix_to_rows(solution.policy.feedback()),
            q: solution.policy.affine().iter().copied().collect(),
            value: solution.value,
            nash_gap: solution.nash_gap,
            worst_case: WorstCaseFile {
                x0: matrix_to_rows(solution.worst_case.x0.matrix()),
                w: solution
                    .worst_case
                    .w
                    .iter()
                    .map(|m| matrix_to_rows(m.matrix()))
                    .collect(),
                v: solution
                    .worst_case
                    .v
                    .iter()
                    .map(|m| matrix_to_rows(m.matrix()))
                    .collect(),
            },
            solver: *solver,
            converged: solution.converged,
            config_hash: config_hash.to_string(),
        }
    }

    /// Reconstructs the causal policy; rejects gains that violate the mask
    /// or do not match the system dimensions.
    pub fn to_policy(&self, sys: &LiftedSystem) -> Result<Policy> {
        let gain = matrix_from_rows(&self.feedback)?;
        let affine = DVector::from_row_slice(&self.q);
        Policy::new(sys.causal_mask(), gain, affine)
    }

    /// The stored worst-case covariance blocks.
    pub fn worst_case_blocks(&self) -> Result<CovarianceBlocks> {
        Ok(CovarianceBlocks {
            x0: SpdMatrix::new(matrix_from_rows(&self.worst_case.x0)?)?,
            w: self
                .worst_case
                .w
                .iter()
                .map(|rows| SpdMatrix::new(matrix_from_rows(rows)?))
                .collect::<Result<_>>()?,
            v: self
                .worst_case
                .v
                .iter()
                .map(|rows| SpdMatrix::new(matrix_from_rows(rows)?))
                .collect::<Result<_>>()?,
        })
    }
}
