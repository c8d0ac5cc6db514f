//! Counter-based deterministic random streams.
//!
//! Monte Carlo runs are keyed by `(seed, sample index, block index)`, so each
//! sample draws from an independent stream whose values do not depend on
//! scheduling or thread count. The generator is a splitmix64-style bijective
//! mixer over a counter; normals come from the Box-Muller transform.

use nalgebra::{DMatrix, DVector};

use crate::spd::{sym_project, SpdMatrix};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic counter-based generator.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl CounterRng {
    /// Stream keyed by `(seed, stream, substream)`; equal keys give equal
    /// sequences regardless of what other streams were consumed.
    pub fn from_parts(seed: u64, stream: u64, substream: u64) -> Self {
        let mut key = mix(seed ^ GOLDEN);
        key = mix(key.wrapping_add(GOLDEN.wrapping_mul(stream.wrapping_add(1))));
        key = mix(key.wrapping_add(GOLDEN.wrapping_mul(substream.wrapping_add(2))));
        Self {
            key,
            counter: 0,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via Box-Muller; pairs are cached.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn normal_vector(&mut self, dim: usize) -> DVector<f64> {
        DVector::from_fn(dim, |_, _| self.standard_normal())
    }
}

/// Random matrix with independent standard normal entries.
pub fn random_gaussian_matrix(rows: usize, cols: usize, rng: &mut CounterRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

/// Random symmetric PD matrix with eigenvalues drawn uniformly from
/// `[lo, hi]` and a uniformly random eigenbasis (QR of a Gaussian matrix).
pub fn random_spd_with_eigenvalues(
    dim: usize,
    lo: f64,
    hi: f64,
    rng: &mut CounterRng,
) -> SpdMatrix {
    let q = random_gaussian_matrix(dim, dim, rng).qr().q();
    let vals = DVector::from_fn(dim, |_, _| lo + (hi - lo) * rng.uniform());
    let m = sym_project(&(&q * DMatrix::from_diagonal(&vals) * q.transpose()));
    SpdMatrix::new(m).expect("symmetric by construction")
}
