//! Monte Carlo engine for closed-loop cost distributions.
//!
//! Sampling is keyed by `(seed, sample index, block index)` through the
//! counter-based streams in [`crate::rng`], so a run is reproducible for a
//! fixed seed no matter how the samples are scheduled across threads. The
//! summary reduction is fixed-order pairwise summation over a pre-allocated
//! cost array, making the reported mean independent of the execution order
//! as well.
//!
//! Parallel fan-out across sample indices honours the
//! `SINKHORN_LQG_THREADS` environment variable (`0` or unset picks the
//! available parallelism).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::lifted::{LiftedSystem, NoiseRealization, Policy};
use crate::rng::CounterRng;
use crate::solver::CovarianceBlocks;

/// Which noise distribution a simulation draws from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionChoice {
    #[default]
    Nominal,
    WorstCase,
    Custom {
        blocks: Vec<Vec<Vec<f64>>>,
    },
}

/// Where the simulated policy comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    #[default]
    Dr,
    Lqg,
    File,
}

/// Sample count, seed, and provenance of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub distribution: DistributionChoice,
    #[serde(default)]
    pub policy_source: PolicySource,
}

impl SimulationPlan {
    pub fn new(samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::DimMismatch("sample count must be at least 1".into()));
        }
        Ok(Self {
            samples,
            seed,
            distribution: DistributionChoice::default(),
            policy_source: PolicySource::default(),
        })
    }
}

/// Cholesky factors of the noise blocks, cached once per run.
pub struct NoiseSampler {
    seed: u64,
    state_dim: usize,
    output_dim: usize,
    factor_x0: DMatrix<f64>,
    factors_w: Vec<DMatrix<f64>>,
    factors_v: Vec<DMatrix<f64>>,
}

impl NoiseSampler {
    pub fn new(blocks: &CovarianceBlocks, seed: u64) -> Result<Self> {
        let factor = |m: &crate::spd::SpdMatrix| -> Result<DMatrix<f64>> {
            m.cholesky_lower()
                .ok_or_else(|| Error::NotPd(m.min_eigenvalue()))
        };
        Ok(Self {
            seed,
            state_dim: blocks.x0.dim(),
            output_dim: blocks.v.first().map_or(0, |m| m.dim()),
            factor_x0: factor(&blocks.x0)?,
            factors_w: blocks.w.iter().map(factor).collect::<Result<_>>()?,
            factors_v: blocks.v.iter().map(factor).collect::<Result<_>>()?,
        })
    }

    /// The `index`-th realization: every block draws from its own
    /// `(seed, index, block)` stream, so the value is independent of any
    /// other draw.
    pub fn sample(&self, index: u64) -> NoiseRealization {
        let horizon = self.factors_w.len();
        let d = self.state_dim;
        let p = self.output_dim;
        let mut w_stack = DVector::zeros(d * (horizon + 1));
        let mut v_stack = DVector::zeros(p * horizon);
        let draw = |factor: &DMatrix<f64>, block_id: u64, dim: usize| {
            let mut rng = CounterRng::from_parts(self.seed, index, block_id);
            factor * rng.normal_vector(dim)
        };
        w_stack
            .rows_mut(0, d)
            .copy_from(&draw(&self.factor_x0, 0, d));
        for t in 0..horizon {
            w_stack
                .rows_mut((t + 1) * d, d)
                .copy_from(&draw(&self.factors_w[t], 1 + t as u64, d));
            v_stack.rows_mut(t * p, p).copy_from(&draw(
                &self.factors_v[t],
                1 + horizon as u64 + t as u64,
                p,
            ));
        }
        NoiseRealization { w_stack, v_stack }
    }
}

/// One-off sampling helper; prefer [`NoiseSampler`] in loops.
pub fn sample_noise(blocks: &CovarianceBlocks, seed: u64, index: u64) -> Result<NoiseRealization> {
    Ok(NoiseSampler::new(blocks, seed)?.sample(index))
}

/// Empirical and theoretical cost statistics of one run.
#[derive(Debug, Clone)]
pub struct CostSummary {
    pub empirical_mean: f64,
    pub empirical_std: f64,
    pub theoretical_mean: f64,
    pub per_sample_costs: Vec<f64>,
    pub seed: u64,
    /// Whether the empirical mean sits inside the four-standard-error band
    /// around the trace-formula prediction.
    pub within_band: bool,
    /// Freedman-Diaconis histogram as `(left edge, count)` pairs.
    pub bins: Vec<(f64, usize)>,
}

impl CostSummary {
    pub fn n(&self) -> usize {
        self.per_sample_costs.len()
    }

    /// The machine-readable summary object.
    pub fn summary_json(&self, config_hash: &str) -> serde_json::Value {
        json!({
            "empirical_mean": self.empirical_mean,
            "empirical_std": self.empirical_std,
            "theoretical_mean": self.theoretical_mean,
            "n": self.n(),
            "seed": self.seed,
            "within_band": self.within_band,
            "bins": self.bins.iter().map(|(e, c)| json!([e, c])).collect::<Vec<_>>(),
            "config_hash": config_hash,
        })
    }

    /// CSV export with the fixed header `sample_id,cost`.
    pub fn costs_csv(&self) -> String {
        let mut out = String::with_capacity(self.per_sample_costs.len() * 24 + 16);
        out.push_str("sample_id,cost\n");
        for (i, cost) in self.per_sample_costs.iter().enumerate() {
            out.push_str(&format!("{i},{cost}\n"));
        }
        out
    }
}

/// Fixed-order pairwise summation; permutation-insensitive to rounding.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

fn thread_budget() -> usize {
    let requested = std::env::var("SINKHORN_LQG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    if requested > 0 {
        return requested;
    }
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Rolls out `plan.samples` closed-loop trajectories and summarizes them.
/// The trace-formula mean is computed alongside; the summary records whether
/// the empirical mean lands within four standard errors of it.
pub fn run_plan(
    sys: &LiftedSystem,
    policy: &Policy,
    blocks: &CovarianceBlocks,
    plan: &SimulationPlan,
) -> Result<CostSummary> {
    if plan.samples == 0 {
        return Err(Error::DimMismatch("sample count must be at least 1".into()));
    }
    blocks.check_dims(sys)?;
    let sampler = NoiseSampler::new(blocks, plan.seed)?;

    let mut costs = vec![0.0f64; plan.samples];
    let threads = thread_budget().min(plan.samples).max(1);
    if threads == 1 {
        for (i, slot) in costs.iter_mut().enumerate() {
            *slot = sys.rollout_cost(policy, &sampler.sample(i as u64))?;
        }
    } else {
        let chunk = plan.samples.div_ceil(threads);
        let failed = std::sync::atomic::AtomicBool::new(false);
        std::thread::scope(|scope| {
            for (c, slice) in costs.chunks_mut(chunk).enumerate() {
                let sampler = &sampler;
                let failed = &failed;
                scope.spawn(move || {
                    let base = c * chunk;
                    for (off, slot) in slice.iter_mut().enumerate() {
                        match sys.rollout_cost(policy, &sampler.sample((base + off) as u64)) {
                            Ok(cost) => *slot = cost,
                            Err(_) => {
                                failed.store(true, std::sync::atomic::Ordering::Relaxed);
                                return;
                            }
                        }
                    }
                });
            }
        });
        if failed.load(std::sync::atomic::Ordering::Relaxed) {
            return Err(Error::DimMismatch(
                "rollout failed during parallel simulation".into(),
            ));
        }
    }

    let n = plan.samples as f64;
    let empirical_mean = pairwise_sum(&costs) / n;
    let squared: Vec<f64> = costs
        .iter()
        .map(|c| (c - empirical_mean) * (c - empirical_mean))
        .collect();
    let empirical_std = if plan.samples > 1 {
        (pairwise_sum(&squared) / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let theoretical_mean = sys.expected_cost(
        policy,
        &blocks.assemble_noise(),
        &blocks.assemble_measurement(),
    )?;
    let within_band = (empirical_mean - theoretical_mean).abs() <= 4.0 * empirical_std / n.sqrt();
    let bins = freedman_diaconis_bins(&costs);
    Ok(CostSummary {
        empirical_mean,
        empirical_std,
        theoretical_mean,
        per_sample_costs: costs,
        seed: plan.seed,
        within_band,
        bins,
    })
}

/// Histogram with the Freedman-Diaconis bin width `2 IQR n^{-1/3}`;
/// degenerate spreads collapse to a single bin.
pub fn freedman_diaconis_bins(values: &[f64]) -> Vec<(f64, usize)> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let quantile = |q: f64| -> f64 {
        let pos = q * (sorted.len() - 1) as f64;
        let base = pos.floor() as usize;
        let frac = pos - base as f64;
        if base + 1 < sorted.len() {
            sorted[base] * (1.0 - frac) + sorted[base + 1] * frac
        } else {
            sorted[base]
        }
    };
    let iqr = quantile(0.75) - quantile(0.25);
    let width = 2.0 * iqr / (values.len() as f64).cbrt();
    if width.is_nan() || width <= 0.0 || hi <= lo {
        return vec![(lo, values.len())];
    }
    let count = (((hi - lo) / width).ceil() as usize).clamp(1, 10_000);
    let width = (hi - lo) / count as f64;
    let mut bins = vec![0usize; count];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(count - 1);
        bins[idx] += 1;
    }
    bins.into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, c))
        .collect()
}
