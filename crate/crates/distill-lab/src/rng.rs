//! Seeded, stream-addressable randomness.
//!
//! Every trajectory (and every independent consumer such as guidance
//! renoising or metric projections) gets its own ChaCha stream derived from
//! one master seed. Identical `(seed, stream)` pairs always reproduce the
//! same draw sequence, so batches parallelize without shared mutable state
//! and runs replay bit-identically at any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Stream lanes reserved per trajectory index. A trajectory `j` owns lanes
/// `[STREAM_STRIDE * j, STREAM_STRIDE * (j + 1))`.
pub const STREAM_STRIDE: u64 = 4;

/// Lane offsets within a trajectory's stream block.
pub const LANE_SOLVER: u64 = 0;
pub const LANE_GUIDANCE: u64 = 1;
pub const LANE_REFERENCE: u64 = 2;
pub const LANE_CALIBRATION: u64 = 3;

/// Dedicated stream for sliced-Wasserstein projection directions.
pub const STREAM_PROJECTIONS: u64 = u64::MAX - 1;
/// Dedicated stream for permutation tests.
pub const STREAM_PERMUTATIONS: u64 = u64::MAX - 2;

/// A counter-based random stream: one master seed, a 64-bit stream id, and
/// a draw counter for accounting.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    draws: u64,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, draws: 0, inner }
    }

    /// The solver lane for trajectory `index`.
    pub fn for_trajectory(seed: u64, index: u64) -> Self {
        Self::new(seed, STREAM_STRIDE * index + LANE_SOLVER)
    }

    /// The guidance lane for trajectory `index`.
    pub fn for_guidance(seed: u64, index: u64) -> Self {
        Self::new(seed, STREAM_STRIDE * index + LANE_GUIDANCE)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of scalar draws consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// One standard-normal scalar.
    pub fn normal(&mut self) -> f64 {
        self.draws += 1;
        self.inner.sample(StandardNormal)
    }

    /// A standard-normal vector of length `dim`.
    pub fn normal_vec(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.normal()).collect()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.inner.gen::<f64>()
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        self.draws += 1;
        self.inner.gen_range(0..n)
    }
}
