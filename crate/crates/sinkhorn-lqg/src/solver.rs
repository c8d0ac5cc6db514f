//! Saddle-point solver for the distributionally robust control game.
//!
//! The finite-dimensional game is
//! `max_{W, V} min_{U causal, q} tr(F1(U) W + F2(U) V) + q^T M q`, where the
//! maximization runs over block-diagonal covariances whose blocks live in
//! per-block entropy-regularized Gelbrich balls. The solver is conditional
//! gradient (Frank-Wolfe) on the concave dual function
//! `phi(W, V) = min_U tr(F1 W + F2 V)`:
//!
//! * the inner minimization is a support-restricted positive definite linear
//!   solve ([`inner_lqg`]), exact up to factorization error, whose optimal
//!   quadratic forms provide supergradient blocks (Danskin);
//! * the linear maximization oracle over each ball ([`GelbrichBall`])
//!   bisects a dual multiplier, with an inner gradient ascent for each
//!   multiplier value;
//! * the duality gap `sum_b lmo_value_b - phi` doubles as the Nash-gap
//!   certificate: at zero gap the policy and the covariances form a saddle
//!   point.
//!
//! The solver is deterministic: fixed initialization, fixed step schedule
//! `2/(k+2)`, no randomness anywhere.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergences::{
    minimal_radius_argmin, AmbiguitySpec, FeasibilityReport, GelbrichEvaluator,
};
use crate::error::{Error, Result};
use crate::lifted::{CausalMask, LiftedSystem, Policy};
use crate::spd::{sym_project, SpdMatrix};

/// Knobs of the saddle solver; everything has a sensible default and is
/// echoed into output files for reproducibility. `seedless` documents that
/// the solver uses no randomness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub tol_gap: f64,
    pub lmo_tol: f64,
    pub bisection_max: usize,
    pub ascent_max: usize,
    pub seedless: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol_gap: 1e-4,
            lmo_tol: 1e-6,
            bisection_max: 200,
            ascent_max: 5000,
            seedless: true,
        }
    }
}

/// Block-diagonal covariances of the game: initial state, per-step process
/// noise, per-step measurement noise.
#[derive(Debug, Clone)]
pub struct CovarianceBlocks {
    pub x0: SpdMatrix,
    pub w: Vec<SpdMatrix>,
    pub v: Vec<SpdMatrix>,
}

impl CovarianceBlocks {
    pub fn check_dims(&self, sys: &LiftedSystem) -> Result<()> {
        let (d, p, horizon) = (sys.state_dim(), sys.output_dim(), sys.horizon());
        if self.x0.dim() != d
            || self.w.len() != horizon
            || self.v.len() != horizon
            || self.w.iter().any(|m| m.dim() != d)
            || self.v.iter().any(|m| m.dim() != p)
        {
            return Err(Error::DimMismatch(
                "covariance blocks do not match the system dimensions".into(),
            ));
        }
        Ok(())
    }

    /// `blkdiag(x0, w_0, .., w_{T-1})`, the stacked exogenous covariance.
    pub fn assemble_noise(&self) -> SpdMatrix {
        let d = self.x0.dim();
        let n = d * (self.w.len() + 1);
        let mut big = DMatrix::zeros(n, n);
        big.view_mut((0, 0), (d, d)).copy_from(self.x0.matrix());
        for (t, block) in self.w.iter().enumerate() {
            big.view_mut(((t + 1) * d, (t + 1) * d), (d, d))
                .copy_from(block.matrix());
        }
        SpdMatrix::new(big).expect("block diagonal of symmetric blocks")
    }

    /// `blkdiag(v_0, .., v_{T-1})`, the stacked measurement covariance.
    pub fn assemble_measurement(&self) -> SpdMatrix {
        let p = self.v.first().map_or(0, |m| m.dim());
        let n = p * self.v.len();
        let mut big = DMatrix::zeros(n, n);
        for (t, block) in self.v.iter().enumerate() {
            big.view_mut((t * p, t * p), (p, p))
                .copy_from(block.matrix());
        }
        SpdMatrix::new(big).expect("block diagonal of symmetric blocks")
    }
}

/// Per-block ambiguity of the game, in the fixed block order
/// `x0, w_0, .., w_{T-1}, v_0, .., v_{T-1}`.
#[derive(Debug, Clone)]
pub struct GameAmbiguity {
    pub x0: AmbiguitySpec,
    pub w: Vec<AmbiguitySpec>,
    pub v: Vec<AmbiguitySpec>,
}

impl GameAmbiguity {
    pub fn check_dims(&self, sys: &LiftedSystem) -> Result<()> {
        let (d, p, horizon) = (sys.state_dim(), sys.output_dim(), sys.horizon());
        if self.x0.dim() != d
            || self.w.len() != horizon
            || self.v.len() != horizon
            || self.w.iter().any(|s| s.dim() != d)
            || self.v.iter().any(|s| s.dim() != p)
        {
            return Err(Error::DimMismatch(
                "ambiguity blocks do not match the system dimensions".into(),
            ));
        }
        Ok(())
    }

    /// Labelled feasibility reports in block order.
    pub fn validate_all(&self) -> Result<Vec<(String, FeasibilityReport)>> {
        let mut reports = vec![("x0".to_string(), self.x0.validate()?)];
        for (t, spec) in self.w.iter().enumerate() {
            reports.push((format!("w[{t}]"), spec.validate()?));
        }
        for (t, spec) in self.v.iter().enumerate() {
            reports.push((format!("v[{t}]"), spec.validate()?));
        }
        Ok(reports)
    }

    /// The nominal covariances (ball centers).
    pub fn nominal_blocks(&self) -> CovarianceBlocks {
        CovarianceBlocks {
            x0: self.x0.center().clone(),
            w: self.w.iter().map(|s| s.center().clone()).collect(),
            v: self.v.iter().map(|s| s.center().clone()).collect(),
        }
    }

    /// Same ambiguity with every radius multiplied by `factor`.
    pub fn scale_radii(&self, factor: f64) -> Result<Self> {
        Ok(Self {
            x0: self.x0.with_radius(self.x0.radius() * factor)?,
            w: self
                .w
                .iter()
                .map(|s| s.with_radius(s.radius() * factor))
                .collect::<Result<_>>()?,
            v: self
                .v
                .iter()
                .map(|s| s.with_radius(s.radius() * factor))
                .collect::<Result<_>>()?,
        })
    }

    fn all_specs(&self) -> Vec<&AmbiguitySpec> {
        let mut specs = vec![&self.x0];
        specs.extend(self.w.iter());
        specs.extend(self.v.iter());
        specs
    }
}

/// Outcome of [`solve_game`]: the policy, nature's covariances, the game
/// value, and the certificate `nash_gap = trace_primal - trace_dual`.
#[derive(Debug, Clone)]
pub struct GameSolution {
    pub policy: Policy,
    pub worst_case: CovarianceBlocks,
    pub value: f64,
    pub nash_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Worst case over the balls at the final policy.
    pub trace_primal: f64,
    /// Best response value at the final covariances.
    pub trace_dual: f64,
    /// Dual value at each iterate, for monotonicity diagnostics.
    pub dual_trace: Vec<f64>,
}

/// Solves the inner LQG problem: the unique causal minimizer of
/// `tr(U^T M U S_eta) + 2 tr(U^T L) + tr(G^T Q G W)` with
/// `S_eta = D W D^T + V` and `L = H^T Q G W D^T`, via the normal equations
/// `M U S_eta + L = 0` restricted to the causal support. The affine term is
/// zero (all noise is zero-mean and `M` is PD).
pub fn inner_lqg(
    sys: &LiftedSystem,
    noise_cov: &SpdMatrix,
    meas_cov: &SpdMatrix,
) -> Result<(Policy, f64)> {
    if noise_cov.dim() != sys.noise_dim() || meas_cov.dim() != sys.measurement_dim() {
        return Err(Error::DimMismatch(
            "covariances do not match the lifted system".into(),
        ));
    }
    let d_map = sys.purified_map();
    let sigma_eta =
        sym_project(&(d_map * noise_cov.matrix() * d_map.transpose())) + meas_cov.matrix();
    let sigma_eta = SpdMatrix::new(sigma_eta)?;
    if sigma_eta.cholesky_lower().is_none() {
        return Err(Error::SingularInnerSystem);
    }

    let big_m = sys.input_quadratic().matrix();
    let linear = sys.input_map().transpose()
        * sys.state_weight().matrix()
        * sys.transition()
        * noise_cov.matrix()
        * d_map.transpose();

    let mask = sys.causal_mask();
    let free = mask.free_entries();
    let n_free = free.len();
    let mut lhs = DMatrix::zeros(n_free, n_free);
    let sigma = sigma_eta.matrix();
    for (row, &(i, j)) in free.iter().enumerate() {
        for (col, &(k, l)) in free.iter().enumerate() {
            lhs[(row, col)] = big_m[(i, k)] * sigma[(j, l)];
        }
    }
    let mut rhs = DVector::zeros(n_free);
    for (row, &(i, j)) in free.iter().enumerate() {
        rhs[row] = -linear[(i, j)];
    }

    let chol = lhs.clone().cholesky().ok_or(Error::SingularInnerSystem)?;
    let mut solution = chol.solve(&rhs);
    // one step of iterative refinement keeps the residual at working
    // precision even for ill-conditioned horizons
    let residual = &rhs - &lhs * &solution;
    solution += chol.solve(&residual);

    let rel_residual = (&rhs - &lhs * &solution).norm() / rhs.norm().max(1.0);
    if rel_residual > 1e-8 {
        return Err(Error::NoConvergence {
            iters: 1,
            context: format!("inner normal equations, residual {rel_residual:.3e}"),
        });
    }

    let mut gain = DMatrix::zeros(mask.rows(), mask.cols());
    for (row, &(i, j)) in free.iter().enumerate() {
        gain[(i, j)] = solution[row];
    }
    let policy = Policy::new(mask, gain, DVector::zeros(mask.rows()))?;
    let value = sys.expected_cost(&policy, noise_cov, meas_cov)?;
    Ok((policy, value))
}

/// The classical controller designed for the nominal covariances.
pub fn nominal_lqg(sys: &LiftedSystem, nominal: &CovarianceBlocks) -> Result<(Policy, f64)> {
    nominal.check_dims(sys)?;
    inner_lqg(
        sys,
        &nominal.assemble_noise(),
        &nominal.assemble_measurement(),
    )
}

/// A prepared ambiguity ball: feasibility verified, divergence minimizer
/// cached, ready to answer linear maximization queries.
pub struct GelbrichBall {
    spec: AmbiguitySpec,
    evaluator: GelbrichEvaluator,
    minimizer: SpdMatrix,
    rho_min: f64,
    start: SpdMatrix,
}

impl GelbrichBall {
    pub fn new(spec: AmbiguitySpec) -> Result<Self> {
        let evaluator = GelbrichEvaluator::new(spec.center(), spec.reference(), spec.epsilon())?;
        let (minimizer, rho_min) = minimal_radius_argmin(&spec)?;
        if spec.radius() < rho_min - 1e-9 {
            return Err(Error::Infeasible(format!(
                "radius {} below the minimal feasible radius {rho_min}",
                spec.radius()
            )));
        }
        // the center is the natural start whenever it is feasible itself;
        // for positive regularization it need not be
        let center_div = evaluator.value(spec.center())?;
        let start = if center_div <= spec.radius() {
            spec.center().clone()
        } else {
            minimizer.clone()
        };
        Ok(Self {
            spec,
            evaluator,
            minimizer,
            rho_min,
            start,
        })
    }

    pub fn spec(&self) -> &AmbiguitySpec {
        &self.spec
    }

    pub fn minimal_radius(&self) -> f64 {
        self.rho_min
    }

    /// Deterministic feasible starting point for searches over the ball.
    pub fn initial_point(&self) -> &SpdMatrix {
        &self.start
    }

    pub fn divergence(&self, m: &SpdMatrix) -> Result<f64> {
        self.evaluator.value(m)
    }

    fn effective_tol(&self) -> f64 {
        // lmo_tol scales with the radius so that wide balls are not chased
        // to absolute precision
        self.spec.radius().max(1.0)
    }

    /// Maximizes the strictly concave `tr(cost M) - lambda * G(M)` by
    /// gradient ascent from the cached minimizer. Returns the maximizer and
    /// its divergence; stops early once the divergence passes `escape`
    /// (the multiplier is then certainly too small).
    fn penalized_argmax(
        &self,
        cost: &SpdMatrix,
        lambda: f64,
        escape: f64,
        opts: &SolverOptions,
    ) -> Result<(SpdMatrix, f64)> {
        let dim = self.spec.dim();
        let mut point = self.start.clone();
        let mut div = self.evaluator.value(&point)?;
        let mut objective = (cost.matrix() * point.matrix()).trace() - lambda * div;
        let mut grad = cost.matrix() - self.evaluator.gradient(&point)? * lambda;
        let grad_tol = 1e-9 * cost.matrix().norm().max(lambda).max(1.0);
        let floor = 1e-14 * (point.trace() / dim as f64).max(1.0);
        let mut step = 1.0 / lambda.max(1.0);
        let mut stalled = 0usize;
        for _ in 0..opts.ascent_max {
            let grad_norm = grad.norm();
            if grad_norm <= grad_tol {
                return Ok((point, div));
            }
            if div > escape {
                return Ok((point, div));
            }
            let mut t = step;
            let mut accepted = None;
            for _ in 0..80 {
                let raw = sym_project(&(point.matrix() + &grad * t));
                let cand = match SpdMatrix::new(raw) {
                    Ok(c) if c.is_pd() => c,
                    Ok(c) => c.psd_floor(floor),
                    Err(_) => {
                        t *= 0.5;
                        continue;
                    }
                };
                if let Ok(cand_div) = self.evaluator.value(&cand) {
                    let cand_obj = (cost.matrix() * cand.matrix()).trace() - lambda * cand_div;
                    if cand_obj >= objective + 1e-4 * t * grad_norm * grad_norm {
                        accepted = Some((cand, cand_div, cand_obj, t));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((next, next_div, next_obj, used_t)) = accepted else {
                return Ok((point, div));
            };
            if used_t * grad_norm <= 1e-13 * point.matrix().norm().max(1.0) {
                stalled += 1;
                if stalled >= 25 {
                    return Ok((next, next_div));
                }
            } else {
                stalled = 0;
            }
            let next_grad = cost.matrix() - self.evaluator.gradient(&next)? * lambda;
            let dx = next.matrix() - point.matrix();
            let dg = &next_grad - &grad;
            let denom = -dx.dot(&dg); // ascent: curvature along dx
            step = if denom > 1e-18 {
                (dx.dot(&dx) / denom).clamp(1e-14, 1e8)
            } else {
                used_t * 2.0
            };
            point = next;
            div = next_div;
            objective = next_obj;
            grad = next_grad;
        }
        Err(Error::NoConvergence {
            iters: opts.ascent_max,
            context: "penalized ascent in the ball oracle".into(),
        })
    }

    /// Linear maximization oracle: argmax of `tr(cost M)` over the ball,
    /// by bisection on the dual multiplier of the divergence constraint.
    /// Returns a feasible maximizer and its objective value.
    pub fn maximize_trace(
        &self,
        cost: &SpdMatrix,
        opts: &SolverOptions,
    ) -> Result<(SpdMatrix, f64)> {
        if cost.dim() != self.spec.dim() {
            return Err(Error::DimMismatch(
                "cost block does not match the ball dimension".into(),
            ));
        }
        let rho = self.spec.radius();
        let tol = opts.lmo_tol * self.effective_tol();

        if cost.matrix().norm() <= 1e-12 {
            return Ok((self.minimizer.clone(), 0.0));
        }
        if rho <= self.rho_min + tol {
            let value = (cost.matrix() * self.minimizer.matrix()).trace();
            return Ok((self.minimizer.clone(), value));
        }

        let escape = 2.0 * rho + 1.0;
        // bracket: divergence at the penalized argmax decreases in lambda
        let mut lambda_hi = 1.0;
        let mut lambda_lo = 1e-12;
        loop {
            let (point, div) = self.penalized_argmax(cost, lambda_hi, escape, opts)?;
            if div <= rho {
                if rho - div <= tol {
                    let value = (cost.matrix() * point.matrix()).trace();
                    return Ok((point, value));
                }
                break;
            }
            lambda_lo = lambda_hi;
            lambda_hi *= 2.0;
            if lambda_hi > 1e12 {
                return Err(Error::BracketFailure(1e12));
            }
        }

        let mut best: Option<(SpdMatrix, f64)> = None;
        for _ in 0..opts.bisection_max {
            let lambda = 0.5 * (lambda_lo + lambda_hi);
            let (point, div) = self.penalized_argmax(cost, lambda, escape, opts)?;
            if div > rho {
                lambda_lo = lambda;
            } else {
                lambda_hi = lambda;
                let closer = best.as_ref().is_none_or(|(b, _)| {
                    let best_div = self.evaluator.value(b).unwrap_or(f64::NEG_INFINITY);
                    div > best_div
                });
                if closer {
                    best = Some((point.clone(), div));
                }
                if rho - div <= tol {
                    let value = (cost.matrix() * point.matrix()).trace();
                    return Ok((point, value));
                }
            }
        }
        // fall back to the tightest feasible point seen if the bracket
        // collapsed without meeting the tolerance
        if let Some((point, div)) = best {
            if rho - div <= 10.0 * tol {
                let value = (cost.matrix() * point.matrix()).trace();
                return Ok((point, value));
            }
        }
        Err(Error::NoConvergence {
            iters: opts.bisection_max,
            context: "dual bisection in the ball oracle".into(),
        })
    }
}

/// Stand-alone linear maximization over one ball; prepares the ball and
/// queries it once.
pub fn worst_case_lmo(
    cost: &SpdMatrix,
    spec: &AmbiguitySpec,
    opts: &SolverOptions,
) -> Result<(SpdMatrix, f64)> {
    GelbrichBall::new(spec.clone())?.maximize_trace(cost, opts)
}

/// Diagonal blocks of `(F1, F2)` at a policy, in the fixed block order.
fn cost_blocks(sys: &LiftedSystem, policy: &Policy) -> Result<Vec<SpdMatrix>> {
    let (f1, f2) = sys.game_matrices(policy)?;
    let (d, p, horizon) = (sys.state_dim(), sys.output_dim(), sys.horizon());
    let mut blocks = Vec::with_capacity(2 * horizon + 1);
    for t in 0..=horizon {
        let block = f1.matrix().view((t * d, t * d), (d, d)).clone_owned();
        blocks.push(SpdMatrix::new(sym_project(&block))?);
    }
    for t in 0..horizon {
        let block = f2.matrix().view((t * p, t * p), (p, p)).clone_owned();
        blocks.push(SpdMatrix::new(sym_project(&block))?);
    }
    Ok(blocks)
}

fn blocks_from_vec(sys: &LiftedSystem, flat: &[SpdMatrix]) -> CovarianceBlocks {
    let horizon = sys.horizon();
    CovarianceBlocks {
        x0: flat[0].clone(),
        w: flat[1..=horizon].to_vec(),
        v: flat[horizon + 1..].to_vec(),
    }
}

/// Nature's exact best response to a fixed policy: per-block linear
/// maximization at the policy's cost blocks (the objective is linear in the
/// covariances for fixed policy). Returns the argmax blocks and the value.
pub fn worst_case_for_policy(
    sys: &LiftedSystem,
    policy: &Policy,
    ambiguity: &GameAmbiguity,
    opts: &SolverOptions,
) -> Result<(CovarianceBlocks, f64)> {
    ambiguity.check_dims(sys)?;
    let balls: Vec<GelbrichBall> = ambiguity
        .all_specs()
        .into_iter()
        .map(|s| GelbrichBall::new(s.clone()))
        .collect::<Result<_>>()?;
    let costs = cost_blocks(sys, policy)?;
    let mut atoms = Vec::with_capacity(balls.len());
    let mut value = 0.0;
    for (ball, cost) in balls.iter().zip(&costs) {
        let (atom, lmo_value) = ball.maximize_trace(cost, opts)?;
        atoms.push(atom);
        value += lmo_value;
    }
    let q = policy.affine();
    value += q.dot(&(sys.input_quadratic().matrix() * q));
    Ok((blocks_from_vec(sys, &atoms), value))
}

/// Frank-Wolfe on the concave dual. Returns the final policy, nature's
/// covariances, the game value, and the Nash-gap certificate; a run that
/// exhausts `max_iters` comes back with `converged = false` rather than an
/// error so partial output can still be inspected.
pub fn solve_game(
    sys: &LiftedSystem,
    ambiguity: &GameAmbiguity,
    opts: &SolverOptions,
) -> Result<GameSolution> {
    ambiguity.check_dims(sys)?;
    let balls: Vec<GelbrichBall> = ambiguity
        .all_specs()
        .into_iter()
        .map(|s| GelbrichBall::new(s.clone()))
        .collect::<Result<_>>()?;

    let mut blocks: Vec<SpdMatrix> = balls.iter().map(|b| b.initial_point().clone()).collect();
    let assembled = blocks_from_vec(sys, &blocks);
    let (mut policy, mut dual_value) = inner_lqg(
        sys,
        &assembled.assemble_noise(),
        &assembled.assemble_measurement(),
    )?;
    let mut dual_trace = vec![dual_value];

    let mut iterations = 0;
    let (mut primal_value, mut gap);
    loop {
        let costs = cost_blocks(sys, &policy)?;
        let mut atoms = Vec::with_capacity(balls.len());
        primal_value = 0.0;
        for (ball, cost) in balls.iter().zip(&costs) {
            let (atom, lmo_value) = ball.maximize_trace(cost, opts)?;
            atoms.push(atom);
            primal_value += lmo_value;
        }
        gap = primal_value - dual_value;
        if gap <= opts.tol_gap * dual_value.abs().max(1.0) || iterations >= opts.max_iters {
            break;
        }

        let step = 2.0 / (iterations as f64 + 2.0);
        let candidate: Vec<SpdMatrix> = blocks
            .iter()
            .zip(&atoms)
            .map(|(current, atom)| {
                SpdMatrix::new(current.matrix() * (1.0 - step) + atom.matrix() * step)
                    .expect("convex combination of symmetric blocks")
            })
            .collect();
        let cand_assembled = blocks_from_vec(sys, &candidate);
        let (cand_policy, cand_value) = inner_lqg(
            sys,
            &cand_assembled.assemble_noise(),
            &cand_assembled.assemble_measurement(),
        )?;
        // accept only non-decreasing dual values; on rejection the step
        // shrinks with the iteration counter and the cached best response
        // stays valid
        if cand_value >= dual_value - 1e-12 * dual_value.abs().max(1.0) {
            blocks = candidate;
            policy = cand_policy;
            dual_value = cand_value;
        }
        dual_trace.push(dual_value);
        iterations += 1;
    }

    let converged = gap <= opts.tol_gap * dual_value.abs().max(1.0);
    Ok(GameSolution {
        policy,
        worst_case: blocks_from_vec(sys, &blocks),
        value: dual_value,
        nash_gap: gap,
        iterations,
        converged,
        trace_primal: primal_value,
        trace_dual: dual_value,
        dual_trace,
    })
}

/// Causal mask of a system, re-exported for policy construction call sites.
pub fn causal_mask(sys: &LiftedSystem) -> CausalMask {
    *sys.causal_mask()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifted::SystemSpec;
    use crate::oracles::{
        brute_game, golden_section, scalar_divergence, ScalarBall, ScalarGameSpec,
    };
    use crate::rng::CounterRng;
    use approx::assert_relative_eq;

    fn scalar_mat(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn unit_system(horizon: usize) -> LiftedSystem {
        let spec = SystemSpec::time_invariant(
            scalar_mat(1.0),
            scalar_mat(1.0),
            scalar_mat(1.0),
            SpdMatrix::from_diagonal(&[1.0]),
            SpdMatrix::from_diagonal(&[1.0]),
            SpdMatrix::from_diagonal(&[1.0]),
            horizon,
        )
        .unwrap();
        LiftedSystem::new(&spec).unwrap()
    }

    fn unit_ambiguity(sys: &LiftedSystem, rho: f64, epsilon: f64) -> GameAmbiguity {
        let (d, p) = (sys.state_dim(), sys.output_dim());
        let ball = |dim: usize| {
            AmbiguitySpec::new(
                SpdMatrix::identity(dim),
                SpdMatrix::identity(dim),
                rho,
                epsilon,
            )
            .unwrap()
        };
        GameAmbiguity {
            x0: ball(d),
            w: vec![ball(d); sys.horizon()],
            v: vec![ball(p); sys.horizon()],
        }
    }

    #[test]
    fn inner_lqg_scalar_unit_instance() {
        let sys = unit_system(1);
        let (policy, value) =
            inner_lqg(&sys, &SpdMatrix::identity(2), &SpdMatrix::identity(1)).unwrap();
        // minimize 4k^2 + 2k + 3
        assert_relative_eq!(policy.feedback()[(0, 0)], -0.25, epsilon = 1e-10);
        assert_relative_eq!(value, 2.75, epsilon = 1e-10);
        assert_relative_eq!(policy.affine().norm(), 0.0);
    }

    #[test]
    fn inner_lqg_zero_linear_term_gives_zero_gain() {
        let sys = unit_system(2);
        let zero_noise = SpdMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        let (policy, value) = inner_lqg(&sys, &zero_noise, &SpdMatrix::identity(2)).unwrap();
        assert_relative_eq!(policy.feedback().norm(), 0.0);
        assert_relative_eq!(value, 0.0);
    }

    #[test]
    fn inner_lqg_beats_random_causal_probes() {
        let mut rng = CounterRng::from_parts(51, 0, 0);
        let sys = unit_system(3);
        let noise_cov = SpdMatrix::from_diagonal(&[1.0, 0.8, 1.2, 0.9]);
        let meas_cov = SpdMatrix::from_diagonal(&[1.0, 1.1, 0.7]);
        let (_, best) = inner_lqg(&sys, &noise_cov, &meas_cov).unwrap();
        let mask = *sys.causal_mask();
        for _ in 0..1000 {
            let mut gain = DMatrix::zeros(mask.rows(), mask.cols());
            for (i, j) in mask.free_entries() {
                gain[(i, j)] = rng.standard_normal();
            }
            let probe = Policy::new(&mask, gain, DVector::zeros(mask.rows())).unwrap();
            let probe_value = sys.expected_cost(&probe, &noise_cov, &meas_cov).unwrap();
            assert!(probe_value >= best - 1e-9, "probe beat the solver");
        }
    }

    #[test]
    fn inner_lqg_rejects_singular_purified_covariance() {
        let sys = unit_system(1);
        let zero_noise = SpdMatrix::new(DMatrix::zeros(2, 2)).unwrap();
        let zero_meas = SpdMatrix::new(DMatrix::zeros(1, 1)).unwrap();
        assert!(matches!(
            inner_lqg(&sys, &zero_noise, &zero_meas),
            Err(Error::SingularInnerSystem)
        ));
    }

    #[test]
    fn lmo_zero_cost_returns_divergence_minimizer() {
        let spec =
            AmbiguitySpec::new(SpdMatrix::identity(2), SpdMatrix::identity(2), 2.0, 1.0).unwrap();
        let zero_cost = SpdMatrix::new(DMatrix::zeros(2, 2)).unwrap();
        let (atom, value) = worst_case_lmo(&zero_cost, &spec, &SolverOptions::default()).unwrap();
        assert_relative_eq!(value, 0.0);
        let (minimizer, _) = minimal_radius_argmin(&spec).unwrap();
        assert_relative_eq!(atom.matrix(), minimizer.matrix(), epsilon = 1e-8);
    }

    #[test]
    fn lmo_scalar_picks_right_boundary_root() {
        // the feasible set of g(s) <= 2 is an interval; a positive cost
        // pushes to its right endpoint
        let spec = AmbiguitySpec::new(
            SpdMatrix::from_diagonal(&[1.0]),
            SpdMatrix::from_diagonal(&[1.0]),
            2.0,
            1.0,
        )
        .unwrap();
        let cost = SpdMatrix::from_diagonal(&[1.0]);
        let (atom, value) = worst_case_lmo(&cost, &spec, &SolverOptions::default()).unwrap();
        let ball = ScalarBall {
            sigma_hat: 1.0,
            sigma_ref: 1.0,
            rho: 2.0,
            epsilon: 1.0,
        };
        let (_, right) = ball.feasible_interval().unwrap();
        assert_relative_eq!(atom.matrix()[(0, 0)], right, epsilon = 1e-4);
        assert_relative_eq!(value, right, epsilon = 1e-4);
        assert_relative_eq!(right, 2.82, epsilon = 1e-2);
    }

    #[test]
    fn lmo_value_nondecreasing_in_radius() {
        let cost = SpdMatrix::from_diagonal(&[1.0]);
        let mut prev = f64::NEG_INFINITY;
        for &rho in &[1.0, 1.5, 2.0] {
            let spec = AmbiguitySpec::new(
                SpdMatrix::from_diagonal(&[1.0]),
                SpdMatrix::from_diagonal(&[1.0]),
                rho,
                1.0,
            )
            .unwrap();
            let (_, value) = worst_case_lmo(&cost, &spec, &SolverOptions::default()).unwrap();
            assert!(value >= prev - 1e-9, "LMO value decreased at rho {rho}");
            prev = value;
        }
    }

    #[test]
    fn lmo_respects_feasibility_and_hits_the_boundary() {
        let mut rng = CounterRng::from_parts(52, 0, 0);
        let opts = SolverOptions::default();
        for _ in 0..5 {
            let spec = AmbiguitySpec::new(
                crate::rng::random_spd_with_eigenvalues(2, 0.5, 2.0, &mut rng),
                SpdMatrix::identity(2),
                4.0,
                0.8,
            )
            .unwrap();
            let ball = GelbrichBall::new(spec.clone()).unwrap();
            let cost = crate::rng::random_spd_with_eigenvalues(2, 0.2, 1.5, &mut rng);
            let (atom, _) = ball.maximize_trace(&cost, &opts).unwrap();
            let div = ball.divergence(&atom).unwrap();
            assert!(div <= spec.radius() + 1e-7, "atom infeasible: {div}");
            assert!(
                spec.radius() - div <= opts.lmo_tol * spec.radius().max(1.0),
                "atom not on the boundary: {div} vs {}",
                spec.radius()
            );
        }
    }

    #[test]
    fn singleton_ball_game_reduces_to_nominal_lqg() {
        let sys = unit_system(2);
        let ambiguity = unit_ambiguity(&sys, 0.0, 0.0);
        let solution = solve_game(&sys, &ambiguity, &SolverOptions::default()).unwrap();
        let (nominal_policy, nominal_value) =
            nominal_lqg(&sys, &ambiguity.nominal_blocks()).unwrap();
        assert!(solution.converged);
        assert_eq!(solution.iterations, 0);
        assert!(solution.nash_gap.abs() <= 1e-9);
        assert_relative_eq!(solution.value, nominal_value, epsilon = 1e-10);
        assert_relative_eq!(
            solution.policy.feedback(),
            nominal_policy.feedback(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn scalar_game_matches_brute_force_grid() {
        let sys = unit_system(1);
        let ambiguity = unit_ambiguity(&sys, 2.0, 1.0);
        let opts = SolverOptions {
            tol_gap: 1e-6,
            ..SolverOptions::default()
        };
        let solution = solve_game(&sys, &ambiguity, &opts).unwrap();
        assert!(solution.converged);

        let ball = ScalarBall {
            sigma_hat: 1.0,
            sigma_ref: 1.0,
            rho: 2.0,
            epsilon: 1.0,
        };
        let brute = brute_game(
            &ScalarGameSpec {
                a: 1.0,
                b: 1.0,
                c: 1.0,
                q0: 1.0,
                q1: 1.0,
                r: 1.0,
                x0: ball,
                w0: ball,
                v0: ball,
            },
            100,
        )
        .unwrap();
        assert!(
            (solution.value - brute.value).abs() <= 1e-2,
            "solver {} vs grid {}",
            solution.value,
            brute.value
        );
        // argmax covariances within one grid cell
        assert!((solution.worst_case.x0.matrix()[(0, 0)] - brute.x0).abs() <= brute.cell.0);
        assert!((solution.worst_case.w[0].matrix()[(0, 0)] - brute.w0).abs() <= brute.cell.1);
        assert!((solution.worst_case.v[0].matrix()[(0, 0)] - brute.v0).abs() <= brute.cell.2);
    }

    #[test]
    fn weak_duality_and_monotone_dual_trace() {
        let sys = unit_system(2);
        let ambiguity = unit_ambiguity(&sys, 1.5, 0.5);
        let solution = solve_game(&sys, &ambiguity, &SolverOptions::default()).unwrap();
        assert!(solution.nash_gap >= -1e-8, "gap {}", solution.nash_gap);
        assert!(solution.trace_primal >= solution.trace_dual - 1e-8);
        for pair in solution.dual_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-10, "dual value decreased");
        }
        assert!(solution.policy.affine().norm() <= 1e-9);
    }

    #[test]
    fn game_value_nondecreasing_in_radius_scaling() {
        let sys = unit_system(1);
        let base = unit_ambiguity(&sys, 1.0, 1.0);
        let mut prev = f64::NEG_INFINITY;
        for &factor in &[1.0, 2.0, 4.0] {
            let scaled = base.scale_radii(factor).unwrap();
            let solution = solve_game(&sys, &scaled, &SolverOptions::default()).unwrap();
            assert!(solution.converged);
            assert!(
                solution.value >= prev - 1e-6 * prev.abs().max(1.0),
                "value decreased at factor {factor}"
            );
            prev = solution.value;
        }
    }

    #[test]
    fn infeasible_radius_is_rejected() {
        let sys = unit_system(1);
        let ambiguity = unit_ambiguity(&sys, 0.0, 1.0);
        assert!(matches!(
            solve_game(&sys, &ambiguity, &SolverOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn nominal_lqg_scalar_hand_gain() {
        let (a, b, c, q1, r) = (1.4, 0.8, 1.2, 2.0, 0.3);
        let spec = SystemSpec::time_invariant(
            scalar_mat(a),
            scalar_mat(b),
            scalar_mat(c),
            SpdMatrix::from_diagonal(&[1.0]),
            SpdMatrix::from_diagonal(&[q1]),
            SpdMatrix::from_diagonal(&[r]),
            1,
        )
        .unwrap();
        let sys = LiftedSystem::new(&spec).unwrap();
        let (x0, v0) = (1.3, 0.7);
        let blocks = CovarianceBlocks {
            x0: SpdMatrix::from_diagonal(&[x0]),
            w: vec![SpdMatrix::from_diagonal(&[1.0])],
            v: vec![SpdMatrix::from_diagonal(&[v0])],
        };
        let (policy, _) = nominal_lqg(&sys, &blocks).unwrap();
        let expected = -q1 * a * b * c * x0 / ((r + q1 * b * b) * (c * c * x0 + v0));
        assert_relative_eq!(policy.feedback()[(0, 0)], expected, epsilon = 1e-10);
    }

    #[test]
    fn worst_case_for_policy_consistency() {
        let sys = unit_system(2);
        let ambiguity = unit_ambiguity(&sys, 2.0, 1.0);
        let opts = SolverOptions::default();
        let solution = solve_game(&sys, &ambiguity, &opts).unwrap();

        let (_, primal) = worst_case_for_policy(&sys, &solution.policy, &ambiguity, &opts).unwrap();
        assert!(
            (primal - solution.trace_primal).abs() <= 1e-6 * primal.abs().max(1.0),
            "primal recomputation drifted: {primal} vs {}",
            solution.trace_primal
        );

        // the worst case dominates the nominal cost whenever the center is
        // feasible (here radius is far above the minimal radius)
        let nominal = ambiguity.nominal_blocks();
        let nominal_cost = sys
            .expected_cost(
                &solution.policy,
                &nominal.assemble_noise(),
                &nominal.assemble_measurement(),
            )
            .unwrap();
        let center_div = crate::divergences::gelbrich_entropic(
            ambiguity.x0.center(),
            ambiguity.x0.center(),
            ambiguity.x0.reference(),
            ambiguity.x0.epsilon(),
        )
        .unwrap();
        assert!(center_div <= ambiguity.x0.radius());
        assert!(primal >= nominal_cost - 1e-9);
    }

    #[test]
    fn worst_case_for_policy_scalar_grid_cross_check() {
        let sys = unit_system(1);
        let ambiguity = unit_ambiguity(&sys, 1.5, 1.0);
        let opts = SolverOptions::default();
        let mask = *sys.causal_mask();
        let k = -0.2;
        let policy = Policy::new(&mask, DMatrix::from_element(1, 1, k), DVector::zeros(1)).unwrap();
        let (blocks, value) = worst_case_for_policy(&sys, &policy, &ambiguity, &opts).unwrap();

        // independent grid over the feasible box at fixed gain
        let ball = ScalarBall {
            sigma_hat: 1.0,
            sigma_ref: 1.0,
            rho: 1.5,
            epsilon: 1.0,
        };
        let game = ScalarGameSpec {
            a: 1.0,
            b: 1.0,
            c: 1.0,
            q0: 1.0,
            q1: 1.0,
            r: 1.0,
            x0: ball,
            w0: ball,
            v0: ball,
        };
        let (lo, hi) = ball.feasible_interval().unwrap();
        let grid: Vec<f64> = (0..200)
            .map(|i| lo + (hi - lo) * i as f64 / 199.0)
            .filter(|&s| ball.divergence(s) <= 1.5 + 1e-9)
            .collect();
        let mut best = f64::NEG_INFINITY;
        let mut arg = (0.0, 0.0, 0.0);
        for &x0 in &grid {
            for &w0 in &grid {
                for &v0 in &grid {
                    let cost = game.expected_cost(k, x0, w0, v0);
                    if cost > best {
                        best = cost;
                        arg = (x0, w0, v0);
                    }
                }
            }
        }
        assert!(
            (value - best).abs() <= 1e-2,
            "worst case {value} vs grid {best} at {arg:?}"
        );
        assert!((blocks.x0.matrix()[(0, 0)] - arg.0).abs() <= (hi - lo) / 100.0);
    }

    #[test]
    fn lmo_right_root_agrees_with_golden_section_refinement() {
        // cross-check the scalar boundary root by direct root refinement of
        // the divergence around the LMO answer
        let rho = 2.0;
        let f = |s: f64| (scalar_divergence(1.0, 1.0, 1.0, s) - rho).abs();
        let (root, _) = golden_section(f, 2.0, 4.0, 1e-12);
        let spec = AmbiguitySpec::new(
            SpdMatrix::from_diagonal(&[1.0]),
            SpdMatrix::from_diagonal(&[1.0]),
            rho,
            1.0,
        )
        .unwrap();
        let cost = SpdMatrix::from_diagonal(&[1.0]);
        let (atom, _) = worst_case_lmo(&cost, &spec, &SolverOptions::default()).unwrap();
        assert_relative_eq!(atom.matrix()[(0, 0)], root, epsilon = 1e-4);
    }
}
