//! Closed-form divergences between zero-mean Gaussians.
//!
//! The central object is the entropy-regularized Gelbrich divergence
//! `G_eps(S1, S2)` between covariances `S1`, `S2`, taken against a Gaussian
//! reference measure `N(0, R)`:
//!
//! ```text
//! G_eps = tr S1 + tr S2 - 2 tr D
//!       + (eps/2) [ tr(R^-1 S2) + log |R|/|S2| + log( (2/eps)^d |D + (eps/4) I| ) ]
//! D     = ( S1^{1/2} S2 S1^{1/2} + (eps^2/16) I )^{1/2}
//! ```
//!
//! For Gaussian marginals this equals the Sinkhorn discrepancy (the
//! entropy-regularized transport cost with a KL penalty against the product
//! reference), and the optimal coupling is Gaussian with an explicit
//! cross-covariance; both facts are exercised against a coupling-space
//! descent oracle in [`crate::oracles`]. At `eps = 0` every regularization
//! term vanishes and `G_0` is the squared Gelbrich (Bures-Wasserstein)
//! distance.
//!
//! Because the discrepancy lacks identity of indiscernibles for `eps > 0`,
//! a ball of radius `rho` around a nominal covariance is empty unless `rho`
//! exceeds a strictly positive minimal radius. [`AmbiguitySpec::validate`]
//! reports both the closed-form value and the authoritative numeric minimum
//! of `G_eps` over the second argument.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::{sym_project, SpdMatrix};

/// Regularization above this is rejected: the ambiguity set degenerates
/// toward the reference singleton or becomes empty.
pub const EPSILON_MAX: f64 = 1e6;

/// Gradient-norm stopping tolerance for the numeric minimal-radius descent.
const MIN_RADIUS_GRAD_TOL: f64 = 1e-8;
const MIN_RADIUS_MAX_ITERS: usize = 10_000;

/// One Sinkhorn/Gelbrich ball: nominal covariance, reference covariance,
/// radius, and regularization strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySpec {
    center: SpdMatrix,
    reference: SpdMatrix,
    radius: f64,
    epsilon: f64,
}

impl AmbiguitySpec {
    pub fn new(center: SpdMatrix, reference: SpdMatrix, radius: f64, epsilon: f64) -> Result<Self> {
        if center.dim() != reference.dim() {
            return Err(Error::DimMismatch(format!(
                "center dim {} vs reference dim {}",
                center.dim(),
                reference.dim()
            )));
        }
        center.ensure_pd()?;
        reference.ensure_pd()?;
        if radius.is_nan() || radius < 0.0 {
            return Err(Error::Infeasible(format!("radius {radius} must be >= 0")));
        }
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::Infeasible(format!("epsilon {epsilon} must be >= 0")));
        }
        if epsilon > EPSILON_MAX {
            return Err(Error::Infeasible(format!(
                "epsilon {epsilon:.3e} exceeds the supported maximum {EPSILON_MAX:.0e}; \
                 the ambiguity set degenerates toward the reference singleton or is empty"
            )));
        }
        Ok(Self {
            center,
            reference,
            radius,
            epsilon,
        })
    }

    pub fn center(&self) -> &SpdMatrix {
        &self.center
    }

    pub fn reference(&self) -> &SpdMatrix {
        &self.reference
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// Same ball with a different radius.
    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        Self::new(
            self.center.clone(),
            self.reference.clone(),
            radius,
            self.epsilon,
        )
    }

    /// Checks that the ball is non-empty: the radius must reach the numeric
    /// minimum of `G_eps` over the second argument.
    pub fn validate(&self) -> Result<FeasibilityReport> {
        let rho_min_numeric = minimal_radius_numeric(self)?;
        let rho_min_paper = minimal_radius_closed_form(self);
        Ok(FeasibilityReport {
            feasible: self.radius >= rho_min_numeric - 1e-9,
            rho_min_numeric,
            rho_min_paper,
            radius: self.radius,
        })
    }
}

/// Outcome of [`AmbiguitySpec::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub rho_min_numeric: f64,
    pub rho_min_paper: f64,
    pub radius: f64,
}

/// Zero-mean Gaussian coupling with marginal covariances `sigma1`, `sigma2`
/// and cross-covariance block `cross`, i.e. joint covariance
/// `[[sigma1, cross], [cross^T, sigma2]]`.
#[derive(Debug, Clone)]
pub struct GaussianCoupling {
    sigma1: SpdMatrix,
    sigma2: SpdMatrix,
    cross: DMatrix<f64>,
}

impl GaussianCoupling {
    pub fn new(sigma1: SpdMatrix, sigma2: SpdMatrix, cross: DMatrix<f64>) -> Result<Self> {
        let d = sigma1.dim();
        if sigma2.dim() != d || cross.nrows() != d || cross.ncols() != d {
            return Err(Error::DimMismatch(
                "coupling blocks must share one dimension".into(),
            ));
        }
        // Schur feasibility: sigma2 - cross^T sigma1^{-1} cross must not dip
        // below -1e-10 I.
        let schur = sigma2.matrix() - cross.transpose() * sigma1.inverse()?.matrix() * &cross;
        let min_eig = SpdMatrix::new(sym_project(&schur))?.min_eigenvalue();
        if min_eig < -1e-10 {
            return Err(Error::NotPsd {
                min_eig,
                tol: 1e-10,
            });
        }
        Ok(Self {
            sigma1,
            sigma2,
            cross,
        })
    }

    pub fn sigma1(&self) -> &SpdMatrix {
        &self.sigma1
    }

    pub fn sigma2(&self) -> &SpdMatrix {
        &self.sigma2
    }

    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }

    /// The stacked `2d x 2d` joint covariance.
    pub fn joint(&self) -> SpdMatrix {
        let d = self.sigma1.dim();
        let mut joint = DMatrix::zeros(2 * d, 2 * d);
        joint
            .view_mut((0, 0), (d, d))
            .copy_from(self.sigma1.matrix());
        joint.view_mut((0, d), (d, d)).copy_from(&self.cross);
        joint
            .view_mut((d, 0), (d, d))
            .copy_from(&self.cross.transpose());
        joint
            .view_mut((d, d), (d, d))
            .copy_from(self.sigma2.matrix());
        SpdMatrix::new(joint).expect("joint is symmetric by construction")
    }
}

/// KL divergence between zero-mean Gaussians `N(0, a)` and `N(0, b)`:
/// `(tr(b^-1 a) - d + log|b| - log|a|) / 2`.
pub fn gaussian_kl(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch(format!(
            "KL arguments have dims {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let d = a.dim() as f64;
    let b_inv = b.inverse()?;
    let trace_term = (b_inv.matrix() * a.matrix()).trace();
    Ok(0.5 * (trace_term - d + b.logdet()? - a.logdet()?))
}

/// Shared per-call state for `G_eps(S1, .)` with fixed first argument and
/// reference: caches `S1^{1/2}`, `R^{-1}`, `log|R|`.
pub(crate) struct GelbrichEvaluator {
    sqrt1: DMatrix<f64>,
    trace1: f64,
    ref_inv: DMatrix<f64>,
    ref_logdet: f64,
    epsilon: f64,
    dim: usize,
}

impl GelbrichEvaluator {
    pub(crate) fn new(sigma1: &SpdMatrix, reference: &SpdMatrix, epsilon: f64) -> Result<Self> {
        if sigma1.dim() != reference.dim() {
            return Err(Error::DimMismatch(format!(
                "first argument dim {} vs reference dim {}",
                sigma1.dim(),
                reference.dim()
            )));
        }
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::Infeasible(format!("epsilon {epsilon} must be >= 0")));
        }
        Ok(Self {
            sqrt1: sigma1.sqrt()?.into_matrix(),
            trace1: sigma1.trace(),
            ref_inv: reference.inverse()?.into_matrix(),
            ref_logdet: reference.logdet()?,
            epsilon,
            dim: sigma1.dim(),
        })
    }

    /// Eigenvalues and eigenvectors of `S = S1^{1/2} S2 S1^{1/2}`.
    fn inner_eigen(&self, sigma2: &SpdMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let s = sym_project(&(&self.sqrt1 * sigma2.matrix() * &self.sqrt1));
        Ok(SpdMatrix::new(s)?.sym_eigen())
    }

    pub(crate) fn value(&self, sigma2: &SpdMatrix) -> Result<f64> {
        if sigma2.dim() != self.dim {
            return Err(Error::DimMismatch(format!(
                "second argument dim {} vs {}",
                sigma2.dim(),
                self.dim
            )));
        }
        let eps = self.epsilon;
        let (s_vals, _) = self.inner_eigen(sigma2)?;
        if eps == 0.0 {
            let mut trace_root = 0.0;
            for &s in s_vals.iter() {
                if s < -1e-12 * s_vals.amax().max(1.0) {
                    return Err(Error::NotPsd {
                        min_eig: s,
                        tol: 0.0,
                    });
                }
                trace_root += s.max(0.0).sqrt();
            }
            return Ok(self.trace1 + sigma2.trace() - 2.0 * trace_root);
        }
        let shift = eps * eps / 16.0;
        let mut trace_d = 0.0;
        let mut logdet_shifted = 0.0;
        for &s in s_vals.iter() {
            let root = (s.max(0.0) + shift).sqrt();
            trace_d += root;
            logdet_shifted += (root + eps / 4.0).ln();
        }
        let transport = self.trace1 + sigma2.trace() - 2.0 * trace_d;
        let kl_part = (&self.ref_inv * sigma2.matrix()).trace() + self.ref_logdet
            - sigma2.logdet()?
            + self.dim as f64 * (2.0 / eps).ln()
            + logdet_shifted;
        Ok(transport + 0.5 * eps * kl_part)
    }

    /// Gradient of `G_eps(S1, .)` at `sigma2`, a symmetric matrix:
    ///
    /// ```text
    /// I - S1^{1/2} D^{-1} S1^{1/2} + (eps/2) R^{-1} - (eps/2) S2^{-1}
    ///   + (eps/4) S1^{1/2} D^{-1} (D + (eps/4) I)^{-1} S1^{1/2}
    /// ```
    ///
    /// with the `eps`-terms dropped at `eps = 0`. Validated against central
    /// finite differences in the oracle suite.
    pub(crate) fn gradient(&self, sigma2: &SpdMatrix) -> Result<DMatrix<f64>> {
        let eps = self.epsilon;
        let (s_vals, s_vecs) = self.inner_eigen(sigma2)?;
        let shift = eps * eps / 16.0;
        let mut weights = DVector::zeros(self.dim);
        for (i, &s) in s_vals.iter().enumerate() {
            let root_sq = s.max(0.0) + shift;
            if root_sq <= 0.0 {
                return Err(Error::NotPd(root_sq));
            }
            let root = root_sq.sqrt();
            // combines -D^{-1} and (eps/4) D^{-1}(D + eps/4 I)^{-1}
            weights[i] = -1.0 / root + 0.25 * eps / (root * (root + 0.25 * eps));
        }
        let middle = &s_vecs * DMatrix::from_diagonal(&weights) * s_vecs.transpose();
        let mut grad = DMatrix::identity(self.dim, self.dim) + &self.sqrt1 * middle * &self.sqrt1;
        if eps > 0.0 {
            grad += 0.5 * eps * (&self.ref_inv - sigma2.inverse()?.matrix());
        }
        Ok(sym_project(&grad))
    }

    /// Minimizes `G_eps(S1, .)` by gradient descent with spectral steps and
    /// backtracking, starting from `S1 + (eps/2) I`. Returns the minimizer
    /// and the minimal value.
    pub(crate) fn minimize(&self, sigma1: &SpdMatrix) -> Result<(SpdMatrix, f64)> {
        let mut x = SpdMatrix::new(
            sigma1.matrix() + DMatrix::identity(self.dim, self.dim) * (0.5 * self.epsilon),
        )?;
        let mut value = self.value(&x)?;
        let mut grad = self.gradient(&x)?;
        let mut step = 1.0;
        for _ in 0..MIN_RADIUS_MAX_ITERS {
            let grad_norm = grad.norm();
            if grad_norm <= MIN_RADIUS_GRAD_TOL {
                return Ok((x, value));
            }
            // backtracking Armijo step on the descent direction -grad
            let mut t = step;
            let mut accepted = None;
            for _ in 0..60 {
                let cand_mat = sym_project(&(x.matrix() - &grad * t));
                if let Ok(cand) = SpdMatrix::new(cand_mat) {
                    if let Ok(cand_val) = self.value(&cand) {
                        if cand_val <= value - 1e-4 * t * grad_norm * grad_norm {
                            accepted = Some((cand, cand_val, t));
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            let Some((next, next_val, used_t)) = accepted else {
                // flat to machine precision around the iterate
                return Ok((x, value));
            };
            let next_grad = self.gradient(&next)?;
            // Barzilai-Borwein step for the next iteration, safeguarded
            let dx = next.matrix() - x.matrix();
            let dg = &next_grad - &grad;
            let denom = dx.dot(&dg);
            step = if denom > 1e-18 {
                (dx.dot(&dx) / denom).clamp(1e-12, 1e6)
            } else {
                used_t * 2.0
            };
            x = next;
            value = next_val;
            grad = next_grad;
        }
        Err(Error::NoConvergence {
            iters: MIN_RADIUS_MAX_ITERS,
            context: "minimal-radius descent".into(),
        })
    }
}

/// Entropy-regularized Gelbrich divergence `G_eps(sigma1, sigma2)` against
/// the reference covariance; at `epsilon = 0` the squared Gelbrich distance.
pub fn gelbrich_entropic(
    sigma1: &SpdMatrix,
    sigma2: &SpdMatrix,
    reference: &SpdMatrix,
    epsilon: f64,
) -> Result<f64> {
    GelbrichEvaluator::new(sigma1, reference, epsilon)?.value(sigma2)
}

/// Sinkhorn discrepancy between zero-mean Gaussians with covariances
/// `sigma1`, `sigma2`. Coincides with [`gelbrich_entropic`]; the alias keeps
/// call sites readable when both marginals are Gaussian.
pub fn sinkhorn_gaussian(
    sigma1: &SpdMatrix,
    sigma2: &SpdMatrix,
    reference: &SpdMatrix,
    epsilon: f64,
) -> Result<f64> {
    gelbrich_entropic(sigma1, sigma2, reference, epsilon)
}

/// Cross-covariance `K` of the optimal Gaussian coupling between
/// `N(0, sigma1)` and `N(0, sigma2)`:
/// `K = sigma1^{1/2} (sigma1^{1/2} sigma2 sigma1^{1/2} + eps^2/16 I)^{1/2} sigma1^{-1/2} - (eps/4) I`.
pub fn optimal_coupling_cross(
    sigma1: &SpdMatrix,
    sigma2: &SpdMatrix,
    epsilon: f64,
) -> Result<DMatrix<f64>> {
    if sigma1.dim() != sigma2.dim() {
        return Err(Error::DimMismatch(format!(
            "coupling arguments have dims {} and {}",
            sigma1.dim(),
            sigma2.dim()
        )));
    }
    sigma2.ensure_pd()?;
    let d = sigma1.dim();
    let sqrt1 = sigma1.sqrt()?;
    let inv_sqrt1 = sigma1.inv_sqrt()?;
    let inner = sym_project(&(sqrt1.matrix() * sigma2.matrix() * sqrt1.matrix()))
        + DMatrix::identity(d, d) * (epsilon * epsilon / 16.0);
    let d_eps = SpdMatrix::new(inner)?.sqrt()?;
    // sigma1 * X_eps with X_eps = S1^{-1/2} D S1^{-1/2} - (eps/4) S1^{-1}
    Ok(sqrt1.matrix() * d_eps.matrix() * inv_sqrt1.matrix()
        - DMatrix::identity(d, d) * (0.25 * epsilon))
}

/// Optimal Gaussian coupling between `N(0, sigma1)` and `N(0, sigma2)`.
pub fn optimal_coupling(
    sigma1: &SpdMatrix,
    sigma2: &SpdMatrix,
    epsilon: f64,
) -> Result<GaussianCoupling> {
    let cross = optimal_coupling_cross(sigma1, sigma2, epsilon)?;
    GaussianCoupling::new(sigma1.clone(), sigma2.clone(), cross)
}

/// Gradient of `G_eps(sigma1, .)` at `sigma2`; symmetric.
pub fn gelbrich_gradient(
    sigma1: &SpdMatrix,
    sigma2: &SpdMatrix,
    reference: &SpdMatrix,
    epsilon: f64,
) -> Result<DMatrix<f64>> {
    GelbrichEvaluator::new(sigma1, reference, epsilon)?.gradient(sigma2)
}

/// Closed-form minimal radius
/// `(eps/2) (tr(R^-1 (center + eps/2 I)) - d + log|R| - d log(eps/2))`.
///
/// Reported for reference only; the closed form assumes a different
/// regularization convention, so feasibility decisions use
/// [`minimal_radius_numeric`]. Returns 0 at `epsilon = 0` (the limit).
pub fn minimal_radius_closed_form(spec: &AmbiguitySpec) -> f64 {
    let eps = spec.epsilon();
    if eps == 0.0 {
        return 0.0;
    }
    let d = spec.dim() as f64;
    let ref_inv = spec
        .reference()
        .inverse()
        .expect("reference PD by construction");
    let shifted = spec.center().matrix() + DMatrix::identity(spec.dim(), spec.dim()) * (0.5 * eps);
    let trace_term = (ref_inv.matrix() * shifted).trace();
    let ref_logdet = spec
        .reference()
        .logdet()
        .expect("reference PD by construction");
    0.5 * eps * (trace_term - d + ref_logdet - d * (0.5 * eps).ln())
}

/// Smallest radius for which the ball is non-empty: the numeric minimum of
/// `G_eps(center, .)` over PD covariances. Authoritative for feasibility.
pub fn minimal_radius_numeric(spec: &AmbiguitySpec) -> Result<f64> {
    Ok(minimal_radius_argmin(spec)?.1)
}

/// Minimizer and minimum of `G_eps(center, .)`; the minimizer doubles as the
/// deterministic starting point for worst-case searches over the ball.
pub fn minimal_radius_argmin(spec: &AmbiguitySpec) -> Result<(SpdMatrix, f64)> {
    let eval = GelbrichEvaluator::new(spec.center(), spec.reference(), spec.epsilon())?;
    eval.minimize(spec.center())
}
