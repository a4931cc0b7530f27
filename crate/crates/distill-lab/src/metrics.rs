//! Distributional quality measures for sample sets.
//!
//! Sliced Wasserstein projects both point sets onto random unit directions
//! and averages the 1-D 2-Wasserstein distances computed from sorted
//! quantiles (linear interpolation between order statistics for unequal
//! sizes). MMD is the unbiased RBF estimate. Both are deterministic given
//! the projection stream, and reductions use fixed-tree summation so
//! results are bit-stable.

use serde::Serialize;
use thiserror::Error;

use crate::rng::RngStream;
use crate::solvers::Trajectory;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("sample sets must share a dimension: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("need at least 16 projections, got {0}")]
    TooFewProjections(usize),
    #[error("variances must be positive")]
    NonPositiveVariance,
    #[error("sample set contains a non-finite entry")]
    NonFinite,
    #[error("mismatched provenance: {0}")]
    MismatchedProvenance(String),
}

/// An `n x d` set of points with a provenance note.
#[derive(Debug, Clone)]
pub struct SampleSet {
    data: Vec<f64>,
    n: usize,
    d: usize,
    provenance: String,
}

impl SampleSet {
    pub fn new(data: Vec<f64>, d: usize, provenance: impl Into<String>) -> Result<Self, MetricError> {
        assert!(d > 0 && data.len() % d == 0, "data length must be a multiple of d");
        let n = data.len() / d;
        if n < 2 {
            return Err(MetricError::TooFewPoints { need: 2, got: n });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite);
        }
        Ok(Self { data, n, d, provenance: provenance.into() })
    }

    pub fn from_rows(rows: &[Vec<f64>], provenance: impl Into<String>) -> Result<Self, MetricError> {
        let d = rows.first().map(|r| r.len()).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            data.extend_from_slice(r);
        }
        Self::new(data, d, provenance)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.d)
    }

    /// Truncate to the first `n` rows (deterministic subsample).
    pub fn head(&self, n: usize) -> SampleSet {
        let n = n.min(self.n);
        SampleSet {
            data: self.data[..n * self.d].to_vec(),
            n,
            d: self.d,
            provenance: self.provenance.clone(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for k in 0..self.d {
            let col: Vec<f64> = (0..self.n).map(|i| self.data[i * self.d + k]).collect();
            out[k] = pairwise_sum(&col) / self.n as f64;
        }
        out
    }

    /// Full sample covariance (d x d, row-major).
    pub fn covariance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut cov = vec![0.0; self.d * self.d];
        for a in 0..self.d {
            for b in a..self.d {
                let prods: Vec<f64> = (0..self.n)
                    .map(|i| (self.data[i * self.d + a] - mean[a]) * (self.data[i * self.d + b] - mean[b]))
                    .collect();
                let v = pairwise_sum(&prods) / (self.n as f64 - 1.0);
                cov[a * self.d + b] = v;
                cov[b * self.d + a] = v;
            }
        }
        cov
    }
}

/// Fixed-tree (pairwise) summation: deterministic order, better rounding
/// than a running sum.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * n as f64 - 0.5;
    if pos <= 0.0 {
        return sorted[0];
    }
    if pos >= (n - 1) as f64 {
        return sorted[n - 1];
    }
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// 1-D 2-Wasserstein distance between two sorted samples via the
/// sorted-quantile formula.
fn w2_1d(sorted_a: &[f64], sorted_b: &[f64]) -> f64 {
    let m = sorted_a.len().max(sorted_b.len());
    let sq: Vec<f64> = if sorted_a.len() == sorted_b.len() {
        sorted_a
            .iter()
            .zip(sorted_b)
            .map(|(x, y)| (x - y) * (x - y))
            .collect()
    } else {
        (0..m)
            .map(|j| {
                let q = (j as f64 + 0.5) / m as f64;
                let d = quantile(sorted_a, q) - quantile(sorted_b, q);
                d * d
            })
            .collect()
    };
    (pairwise_sum(&sq) / m as f64).sqrt()
}

/// Mean over random unit directions of the 1-D 2-Wasserstein distance
/// between the projected samples.
pub fn sliced_wasserstein(
    a: &SampleSet,
    b: &SampleSet,
    n_projections: usize,
    rng: &mut RngStream,
) -> Result<f64, MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimensionMismatch(a.dim(), b.dim()));
    }
    if n_projections < 16 {
        return Err(MetricError::TooFewProjections(n_projections));
    }
    let d = a.dim();
    let mut distances = Vec::with_capacity(n_projections);
    for _ in 0..n_projections {
        let dir = loop {
            let v = rng.normal_vec(d);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect::<Vec<f64>>();
            }
        };
        let mut pa: Vec<f64> = a.rows().map(|r| dot(r, &dir)).collect();
        let mut pb: Vec<f64> = b.rows().map(|r| dot(r, &dir)).collect();
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        distances.push(w2_1d(&pa, &pb));
    }
    Ok(pairwise_sum(&distances) / n_projections as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bandwidth rule for the RBF kernel.
#[derive(Debug, Clone, Copy)]
pub enum Bandwidth {
    /// Median of pooled pairwise distances.
    Median,
    Fixed(f64),
}

/// Unbiased squared-MMD estimate with an RBF kernel.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MmdEstimate {
    /// The unbiased estimate; may be negative under the null.
    pub raw: f64,
    /// Clamped at zero for reporting.
    pub reported: f64,
    pub bandwidth: f64,
}

pub fn mmd_rbf(a: &SampleSet, b: &SampleSet, bandwidth: Bandwidth) -> Result<MmdEstimate, MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimensionMismatch(a.dim(), b.dim()));
    }
    let bw = match bandwidth {
        Bandwidth::Fixed(v) => {
            if !(v > 0.0) {
                return Err(MetricError::NonPositiveVariance);
            }
            v
        }
        Bandwidth::Median => median_heuristic(a, b),
    };
    let gamma = 1.0 / (2.0 * bw * bw);
    let kern = |x: &[f64], y: &[f64]| {
        let sq: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
        (-gamma * sq).exp()
    };
    let xx = mean_offdiag(a, a, &kern, true);
    let yy = mean_offdiag(b, b, &kern, true);
    let xy = mean_offdiag(a, b, &kern, false);
    let raw = xx + yy - 2.0 * xy;
    Ok(MmdEstimate { raw, reported: raw.max(0.0), bandwidth: bw })
}

fn mean_offdiag(a: &SampleSet, b: &SampleSet, kern: &dyn Fn(&[f64], &[f64]) -> f64, exclude_diag: bool) -> f64 {
    let mut rows = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        let terms: Vec<f64> = (0..b.len())
            .filter(|&j| !(exclude_diag && i == j))
            .map(|j| kern(a.row(i), b.row(j)))
            .collect();
        rows.push(pairwise_sum(&terms));
    }
    let total = pairwise_sum(&rows);
    let count = if exclude_diag {
        (a.len() * (b.len() - 1)) as f64
    } else {
        (a.len() * b.len()) as f64
    };
    total / count
}

fn median_heuristic(a: &SampleSet, b: &SampleSet) -> f64 {
    let mut dists = Vec::new();
    let pooled: Vec<&[f64]> = a.rows().chain(b.rows()).collect();
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            let sq: f64 = pooled[i]
                .iter()
                .zip(pooled[j])
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            dists.push(sq.sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists[dists.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Closed-form squared 2-Wasserstein distance between diagonal Gaussians.
pub fn gaussian_w2(
    mean_a: &[f64],
    var_a: &[f64],
    mean_b: &[f64],
    var_b: &[f64],
) -> Result<f64, MetricError> {
    if mean_a.len() != mean_b.len() || var_a.len() != var_b.len() || mean_a.len() != var_a.len() {
        return Err(MetricError::DimensionMismatch(mean_a.len(), mean_b.len()));
    }
    if var_a.iter().chain(var_b).any(|&v| !(v > 0.0)) {
        return Err(MetricError::NonPositiveVariance);
    }
    let mean_term: f64 = mean_a
        .iter()
        .zip(mean_b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    let var_term: f64 = var_a
        .iter()
        .zip(var_b)
        .map(|(p, q)| (p.sqrt() - q.sqrt()) * (p.sqrt() - q.sqrt()))
        .sum();
    Ok(mean_term + var_term)
}

/// Euclidean distance between trajectory endpoints. Both runs must start
/// from the same state.
pub fn trajectory_endpoint_error(traj: &Trajectory, reference: &Trajectory) -> Result<f64, MetricError> {
    let a = &traj.records[0].x;
    let b = &reference.records[0].x;
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch(a.len(), b.len()));
    }
    if a != b {
        return Err(MetricError::MismatchedProvenance("trajectories start from different states".into()));
    }
    Ok(traj
        .final_x
        .iter()
        .zip(&reference.final_x)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt())
}

/// Summary discrepancies of a sample set against a reference set.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub sliced_wasserstein: f64,
    pub mmd_rbf: f64,
    pub mean_error: Vec<f64>,
    pub cov_frobenius_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w2_gaussian: Option<f64>,
}

/// Compute the standard report of `set` against `reference`. MMD uses a
/// deterministic prefix of at most `mmd_cap` points per side.
pub fn metric_report(
    reference: &SampleSet,
    set: &SampleSet,
    n_projections: usize,
    mmd_cap: usize,
    rng: &mut RngStream,
) -> Result<MetricReport, MetricError> {
    let sw = sliced_wasserstein(reference, set, n_projections, rng)?;
    let mmd = mmd_rbf(&reference.head(mmd_cap), &set.head(mmd_cap), Bandwidth::Median)?;
    let mean_ref = reference.mean();
    let mean_set = set.mean();
    let mean_error: Vec<f64> = mean_set.iter().zip(&mean_ref).map(|(a, b)| a - b).collect();
    let cov_ref = reference.covariance();
    let cov_set = set.covariance();
    let cov_frobenius_error = cov_ref
        .iter()
        .zip(&cov_set)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    Ok(MetricReport {
        sliced_wasserstein: sw,
        mmd_rbf: mmd.reported,
        mean_error,
        cov_frobenius_error,
        w2_gaussian: None,
    })
}
