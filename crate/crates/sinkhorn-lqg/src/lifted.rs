//! Stacked finite-horizon representation of the control problem.
//!
//! For a horizon-`T` linear system `x_{t+1} = A_t x_t + B_t u_t + w_t`,
//! `y_t = C_t x_t + v_t`, the whole trajectory is written over the stacked
//! noise `w = (x_0, w_0, .., w_{T-1})` and inputs `u = (u_0, .., u_{T-1})` as
//! `x = G w + H u`, with outputs `y = C x + v`. Policies act on the purified
//! outputs `eta = y - y_hat`, where `y_hat` comes from a noise-free copy of
//! the plant driven by the same inputs; `eta = D w + v` with `D = C G` is
//! input-independent, which makes the closed-loop cost jointly convex in the
//! policy parameters.
//!
//! Block conventions: `G` has block `(t, s) = A_{t-1} ... A_s` for `s <= t`
//! (identity on the diagonal), `H` has block `(t, j) = A^t_{j+1} B_j` below
//! the diagonal, `C` places `C_t` on the diagonal of a `pT x d(T+1)` matrix
//! whose last block column is zero. The stacking order `(x_0, w_0, ..)` then
//! `(v_0, ..)` is fixed and shared with the covariance-block layout.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spd::{sym_project, SpdMatrix};

/// Per-step system and cost matrices for a horizon-`T` problem.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    horizon: usize,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    q: Vec<SpdMatrix>,
    r: Vec<SpdMatrix>,
}

impl SystemSpec {
    /// Per-step matrices: `a`, `b`, `c`, `r` have `T` entries; `q` has
    /// `T + 1` (stage weights plus the terminal weight). Stage weights must
    /// be PSD and input weights PD.
    pub fn new(
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        c: Vec<DMatrix<f64>>,
        q: Vec<SpdMatrix>,
        r: Vec<SpdMatrix>,
    ) -> Result<Self> {
        let horizon = a.len();
        if horizon == 0 {
            return Err(Error::DimMismatch("horizon must be at least 1".into()));
        }
        if b.len() != horizon || c.len() != horizon || r.len() != horizon {
            return Err(Error::DimMismatch(format!(
                "expected {horizon} entries in b, c, r; got {}, {}, {}",
                b.len(),
                c.len(),
                r.len()
            )));
        }
        if q.len() != horizon + 1 {
            return Err(Error::DimMismatch(format!(
                "expected {} state weights (stages plus terminal), got {}",
                horizon + 1,
                q.len()
            )));
        }
        let d = a[0].nrows();
        let m = b[0].ncols();
        let p = c[0].nrows();
        for t in 0..horizon {
            if a[t].nrows() != d || a[t].ncols() != d {
                return Err(Error::DimMismatch(format!("a[{t}] is not {d}x{d}")));
            }
            if b[t].nrows() != d || b[t].ncols() != m {
                return Err(Error::DimMismatch(format!("b[{t}] is not {d}x{m}")));
            }
            if c[t].nrows() != p || c[t].ncols() != d {
                return Err(Error::DimMismatch(format!("c[{t}] is not {p}x{d}")));
            }
            if r[t].dim() != m {
                return Err(Error::DimMismatch(format!("r[{t}] is not {m}x{m}")));
            }
            r[t].ensure_pd()?;
        }
        for (t, qt) in q.iter().enumerate() {
            if qt.dim() != d {
                return Err(Error::DimMismatch(format!("q[{t}] is not {d}x{d}")));
            }
            qt.ensure_psd()?;
        }
        Ok(Self {
            horizon,
            a,
            b,
            c,
            q,
            r,
        })
    }

    /// Broadcasts one set of matrices across all stages.
    pub fn time_invariant(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        q: SpdMatrix,
        q_terminal: SpdMatrix,
        r: SpdMatrix,
        horizon: usize,
    ) -> Result<Self> {
        let mut q_list = vec![q; horizon];
        q_list.push(q_terminal);
        Self::new(
            vec![a; horizon],
            vec![b; horizon],
            vec![c; horizon],
            q_list,
            vec![r; horizon],
        )
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c[0].nrows()
    }

    pub fn a(&self, t: usize) -> &DMatrix<f64> {
        &self.a[t]
    }

    pub fn b(&self, t: usize) -> &DMatrix<f64> {
        &self.b[t]
    }

    pub fn c(&self, t: usize) -> &DMatrix<f64> {
        &self.c[t]
    }

    pub fn q(&self, t: usize) -> &SpdMatrix {
        &self.q[t]
    }

    pub fn r(&self, t: usize) -> &SpdMatrix {
        &self.r[t]
    }
}

/// Block-lower-triangular support pattern of a causal feedback matrix: block
/// `(t, s)` of the `mT x pT` gain is free iff `s <= t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CausalMask {
    input_dim: usize,
    output_dim: usize,
    horizon: usize,
}

impl CausalMask {
    pub fn new(input_dim: usize, output_dim: usize, horizon: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            horizon,
        }
    }

    pub fn rows(&self) -> usize {
        self.input_dim * self.horizon
    }

    pub fn cols(&self) -> usize {
        self.output_dim * self.horizon
    }

    pub fn is_free(&self, row: usize, col: usize) -> bool {
        col / self.output_dim <= row / self.input_dim
    }

    /// Free entries in row-major order; the fixed enumeration used to
    /// assemble and solve the support-restricted normal equations.
    pub fn free_entries(&self) -> Vec<(usize, usize)> {
        let mut free = Vec::new();
        for row in 0..self.rows() {
            for col in 0..self.cols() {
                if self.is_free(row, col) {
                    free.push((row, col));
                }
            }
        }
        free
    }

    pub fn respects(&self, gain: &DMatrix<f64>) -> bool {
        if gain.nrows() != self.rows() || gain.ncols() != self.cols() {
            return false;
        }
        for row in 0..self.rows() {
            for col in 0..self.cols() {
                if !self.is_free(row, col) && gain[(row, col)] != 0.0 {
                    return false;
                }
            }
        }
        true
    }
}

/// One realization of the exogenous noise: `w_stack = (x_0, w_0, ..)` of
/// length `d(T+1)` and `v_stack = (v_0, ..)` of length `pT`.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    pub w_stack: DVector<f64>,
    pub v_stack: DVector<f64>,
}

impl NoiseRealization {
    pub fn zeros(state_dim: usize, output_dim: usize, horizon: usize) -> Self {
        Self {
            w_stack: DVector::zeros(state_dim * (horizon + 1)),
            v_stack: DVector::zeros(output_dim * horizon),
        }
    }
}

/// Affine causal policy `u = U eta + q` on purified outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    feedback: DMatrix<f64>,
    affine: DVector<f64>,
}

impl Policy {
    /// Entries outside the causal mask must be exactly zero.
    pub fn new(mask: &CausalMask, feedback: DMatrix<f64>, affine: DVector<f64>) -> Result<Self> {
        if affine.len() != mask.rows() {
            return Err(Error::DimMismatch(format!(
                "affine term has length {}, expected {}",
                affine.len(),
                mask.rows()
            )));
        }
        if !mask.respects(&feedback) {
            return Err(Error::DimMismatch(
                "feedback matrix violates the causal sparsity pattern".into(),
            ));
        }
        Ok(Self { feedback, affine })
    }

    pub fn zero(mask: &CausalMask) -> Self {
        Self {
            feedback: DMatrix::zeros(mask.rows(), mask.cols()),
            affine: DVector::zeros(mask.rows()),
        }
    }

    pub fn feedback(&self) -> &DMatrix<f64> {
        &self.feedback
    }

    pub fn affine(&self) -> &DVector<f64> {
        &self.affine
    }

    /// Stacked input for a given purified-output vector.
    pub fn input(&self, purified: &DVector<f64>) -> DVector<f64> {
        &self.feedback * purified + &self.affine
    }
}

/// The stacked horizon-`T` problem data.
#[derive(Debug, Clone)]
pub struct LiftedSystem {
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    horizon: usize,
    big_g: DMatrix<f64>,
    big_h: DMatrix<f64>,
    big_c: DMatrix<f64>,
    big_d: DMatrix<f64>,
    big_q: SpdMatrix,
    big_r: SpdMatrix,
    big_m: SpdMatrix,
    mask: CausalMask,
}

impl LiftedSystem {
    pub fn new(spec: &SystemSpec) -> Result<Self> {
        let (d, m, p, horizon) = (
            spec.state_dim(),
            spec.input_dim(),
            spec.output_dim(),
            spec.horizon(),
        );
        let n_states = d * (horizon + 1);
        let n_inputs = m * horizon;
        let n_outputs = p * horizon;

        // transition products A^t_s = A_{t-1} ... A_s, A^t_t = I, built row
        // by row: A^t_s = A_{t-1} * A^{t-1}_s
        let mut big_g = DMatrix::zeros(n_states, n_states);
        for t in 0..=horizon {
            for s in (0..=t).rev() {
                let block = if s == t {
                    DMatrix::identity(d, d)
                } else {
                    spec.a(t - 1) * big_g.view(((t - 1) * d, s * d), (d, d)).clone_owned()
                };
                big_g.view_mut((t * d, s * d), (d, d)).copy_from(&block);
            }
        }

        let mut big_h = DMatrix::zeros(n_states, n_inputs);
        for t in 1..=horizon {
            for j in 0..t {
                let reach = big_g.view((t * d, (j + 1) * d), (d, d)).clone_owned();
                big_h
                    .view_mut((t * d, j * m), (d, m))
                    .copy_from(&(reach * spec.b(j)));
            }
        }

        let mut big_c = DMatrix::zeros(n_outputs, n_states);
        for t in 0..horizon {
            big_c.view_mut((t * p, t * d), (p, d)).copy_from(spec.c(t));
        }
        let big_d = &big_c * &big_g;

        let mut big_q = DMatrix::zeros(n_states, n_states);
        for t in 0..=horizon {
            big_q
                .view_mut((t * d, t * d), (d, d))
                .copy_from(spec.q(t).matrix());
        }
        let mut big_r = DMatrix::zeros(n_inputs, n_inputs);
        for t in 0..horizon {
            big_r
                .view_mut((t * m, t * m), (m, m))
                .copy_from(spec.r(t).matrix());
        }

        let big_m = sym_project(&(&big_r + big_h.transpose() * &big_q * &big_h));
        let big_m = SpdMatrix::new(big_m)?;
        big_m.ensure_pd()?;

        Ok(Self {
            state_dim: d,
            input_dim: m,
            output_dim: p,
            horizon,
            big_g,
            big_h,
            big_c,
            big_d,
            big_q: SpdMatrix::new(big_q)?,
            big_r: SpdMatrix::new(big_r)?,
            big_m,
            mask: CausalMask::new(m, p, horizon),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Length of the stacked exogenous vector `(x_0, w_0, ..)`: `d(T+1)`.
    pub fn noise_dim(&self) -> usize {
        self.state_dim * (self.horizon + 1)
    }

    /// Length of the stacked measurement noise / purified outputs: `pT`.
    pub fn measurement_dim(&self) -> usize {
        self.output_dim * self.horizon
    }

    /// Length of the stacked input vector: `mT`.
    pub fn input_stack_dim(&self) -> usize {
        self.input_dim * self.horizon
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.big_g
    }

    pub fn input_map(&self) -> &DMatrix<f64> {
        &self.big_h
    }

    pub fn output_map(&self) -> &DMatrix<f64> {
        &self.big_c
    }

    /// `D = C G`, the noise-to-purified-output map.
    pub fn purified_map(&self) -> &DMatrix<f64> {
        &self.big_d
    }

    pub fn state_weight(&self) -> &SpdMatrix {
        &self.big_q
    }

    pub fn input_weight(&self) -> &SpdMatrix {
        &self.big_r
    }

    /// `M = R + H^T Q H`, the PD quadratic form on stacked inputs.
    pub fn input_quadratic(&self) -> &SpdMatrix {
        &self.big_m
    }

    pub fn causal_mask(&self) -> &CausalMask {
        &self.mask
    }

    fn check_noise(&self, noise: &NoiseRealization) -> Result<()> {
        if noise.w_stack.len() != self.noise_dim() || noise.v_stack.len() != self.measurement_dim()
        {
            return Err(Error::DimMismatch(format!(
                "noise stacks have lengths {} and {}, expected {} and {}",
                noise.w_stack.len(),
                noise.v_stack.len(),
                self.noise_dim(),
                self.measurement_dim()
            )));
        }
        Ok(())
    }

    /// `eta = D w + v`; reads only the exogenous noise, never the policy.
    pub fn purified_outputs(&self, noise: &NoiseRealization) -> Result<DVector<f64>> {
        self.check_noise(noise)?;
        Ok(&self.big_d * &noise.w_stack + &noise.v_stack)
    }

    /// Exact closed-loop cost `u^T R u + x^T Q x` of one noise realization
    /// under `u = U (D w + v) + q`, `x = H u + G w`.
    pub fn rollout_cost(&self, policy: &Policy, noise: &NoiseRealization) -> Result<f64> {
        let input = policy.input(&self.purified_outputs(noise)?);
        let state = &self.big_h * &input + &self.big_g * &noise.w_stack;
        Ok(input.dot(&(self.big_r.matrix() * &input)) + state.dot(&(self.big_q.matrix() * &state)))
    }

    /// Quadratic forms `(F1, F2)` such that the expected cost under noise
    /// covariances `(W, V)` is `tr(F1 W + F2 V) + q^T M q`:
    /// `F1 = D^T U^T R U D + (H U D + G)^T Q (H U D + G)`, `F2 = U^T M U`.
    pub fn game_matrices(&self, policy: &Policy) -> Result<(SpdMatrix, SpdMatrix)> {
        let gain = policy.feedback();
        if gain.nrows() != self.input_stack_dim() || gain.ncols() != self.measurement_dim() {
            return Err(Error::DimMismatch("policy does not match system".into()));
        }
        let gain_d = gain * &self.big_d;
        let closed = &self.big_h * &gain_d + &self.big_g;
        let f1 = gain_d.transpose() * self.big_r.matrix() * &gain_d
            + closed.transpose() * self.big_q.matrix() * &closed;
        let f2 = gain.transpose() * self.big_m.matrix() * gain;
        Ok((
            SpdMatrix::new(sym_project(&f1))?,
            SpdMatrix::new(sym_project(&f2))?,
        ))
    }

    /// Trace-formula expected cost at block-diagonal covariances.
    pub fn expected_cost(
        &self,
        policy: &Policy,
        noise_cov: &SpdMatrix,
        meas_cov: &SpdMatrix,
    ) -> Result<f64> {
        let (f1, f2) = self.game_matrices(policy)?;
        let q = policy.affine();
        Ok((f1.matrix() * noise_cov.matrix()).trace()
            + (f2.matrix() * meas_cov.matrix()).trace()
            + q.dot(&(self.big_m.matrix() * q)))
    }
}
