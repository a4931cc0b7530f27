//! Discrete noise schedules and the timestep grids solvers walk.
//!
//! A schedule is stored once in variance-preserving (VP) form: per-step betas
//! `beta_t`, `alpha_t = 1 - beta_t`, and the cumulative products
//! `alpha_bar_t`. Index 0 is the clean side (`alpha_bar_0 = 1`) and index
//! `n_train` is the fully noised side. The variance-exploding (VE) view used
//! by the DPM-style solvers is a pure coordinate change,
//! `sigma = sqrt((1 - alpha_bar) / alpha_bar)` with log time `t = -ln sigma`,
//! computed on demand so there is a single source of truth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("n_train must be at least 2, got {0}")]
    TooFewSteps(usize),
    #[error("beta bounds must satisfy 0 < beta_min <= beta_max < 1, got [{0}, {1}]")]
    InvalidBetaRange(f64, f64),
    #[error("m_steps must be in [1, n_train], got {m_steps} with n_train {n_train}")]
    InvalidStepCount { m_steps: usize, n_train: usize },
    #[error("grid steps must be strictly descending and end at 0: {0}")]
    InvalidGrid(String),
    #[error("time index {0} outside schedule range 0..={1}")]
    TimeOutOfRange(usize, usize),
    #[error("degenerate interval: adjacent grid entries share a noise level")]
    DegenerateInterval,
    #[error("intermediate ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
}

/// How betas evolve over the training range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
    ScaledLinear,
}

/// A discrete VP noise schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// `alpha_bars[t]` for `t in 0..=n_train`, with `alpha_bars[0] = 1`.
    alpha_bars: Vec<f64>,
}

/// One point on the noise ladder, in both parameterizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub alpha_bar: f64,
    pub sigma: f64,
}

impl NoiseLevel {
    pub fn from_alpha_bar(alpha_bar: f64) -> Self {
        debug_assert!(alpha_bar > 0.0 && alpha_bar <= 1.0);
        let sigma = ((1.0 - alpha_bar) / alpha_bar).sqrt();
        Self { alpha_bar, sigma }
    }

    pub fn from_sigma(sigma: f64) -> Self {
        debug_assert!(sigma >= 0.0);
        Self { alpha_bar: 1.0 / (1.0 + sigma * sigma), sigma }
    }

    /// Log-sigma time `t = -ln sigma`; infinite at the clean end.
    pub fn log_time(&self) -> f64 {
        -self.sigma.ln()
    }
}

/// Build a schedule of `n_train` steps with the given beta bounds.
///
/// For the cosine kind the bounds only clip the derived betas (the shape
/// comes from the squared-cosine alpha-bar curve).
pub fn build_schedule(
    kind: ScheduleKind,
    n_train: usize,
    beta_min: f64,
    beta_max: f64,
) -> Result<NoiseSchedule, ScheduleError> {
    if n_train < 2 {
        return Err(ScheduleError::TooFewSteps(n_train));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(ScheduleError::InvalidBetaRange(beta_min, beta_max));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => linspace(beta_min, beta_max, n_train),
        ScheduleKind::ScaledLinear => linspace(beta_min.sqrt(), beta_max.sqrt(), n_train)
            .into_iter()
            .map(|b| b * b)
            .collect(),
        ScheduleKind::Cosine => {
            // squaredcos-cap style: betas derived from the alpha-bar curve,
            // clipped into the requested range.
            let f = |t: f64| {
                let s = 0.008;
                let arg = (t / n_train as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
                arg.cos().powi(2)
            };
            (1..=n_train)
                .map(|t| {
                    let beta = 1.0 - f(t as f64) / f(t as f64 - 1.0);
                    beta.clamp(beta_min, beta_max)
                })
                .collect()
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(n_train + 1);
    alpha_bars.push(1.0);
    let mut acc = 1.0;
    for &a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule { kind, betas, alphas, alpha_bars })
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn n_train(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `alpha_bar` at integer index `t in 0..=n_train`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `alpha_bar` at a fractional index, log-linear between stored values.
    /// Exact at integers; 1 at the clean end.
    pub fn alpha_bar_at(&self, tau: f64) -> f64 {
        assert!(
            (0.0..=self.n_train() as f64).contains(&tau),
            "fractional index {tau} outside schedule range"
        );
        let lo = tau.floor() as usize;
        if lo as f64 == tau {
            return self.alpha_bars[lo];
        }
        let hi = lo + 1;
        let w = tau - lo as f64;
        let log_lo = self.alpha_bars[lo].ln();
        let log_hi = self.alpha_bars[hi].ln();
        (log_lo + w * (log_hi - log_lo)).exp()
    }

    pub fn level(&self, t: usize) -> NoiseLevel {
        NoiseLevel::from_alpha_bar(self.alpha_bar(t))
    }

    pub fn level_at(&self, tau: f64) -> NoiseLevel {
        NoiseLevel::from_alpha_bar(self.alpha_bar_at(tau))
    }

    /// VE noise level at integer index.
    pub fn sigma(&self, t: usize) -> f64 {
        self.level(t).sigma
    }
}

/// How grid timesteps are spaced over the training range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpacingKind {
    Uniform,
    Trailing,
    Custom,
}

/// A descending list of timestep indices from the noisy side down to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    steps: Vec<usize>,
    spacing: SpacingKind,
}

/// Construct a sampling grid of `m_steps` solver steps (`m_steps + 1`
/// entries, ending at index 0).
pub fn make_grid(
    schedule: &NoiseSchedule,
    m_steps: usize,
    spacing: SpacingKind,
) -> Result<TimeGrid, ScheduleError> {
    let n = schedule.n_train();
    if m_steps < 1 || m_steps > n {
        return Err(ScheduleError::InvalidStepCount { m_steps, n_train: n });
    }
    let steps = match spacing {
        SpacingKind::Uniform => (0..=m_steps)
            .map(|j| ((n as f64) * (1.0 - j as f64 / m_steps as f64)).round() as usize)
            .collect::<Vec<_>>(),
        SpacingKind::Trailing => {
            // Community convention: call times n/m * {m, m-1, ..., 1} minus
            // one, with the clean endpoint appended.
            let ratio = n as f64 / m_steps as f64;
            let mut steps: Vec<usize> = (0..m_steps)
                .map(|j| (ratio * (m_steps - j) as f64).round() as usize - 1)
                .collect();
            if *steps.last().unwrap() != 0 {
                steps.push(0);
            }
            steps
        }
        SpacingKind::Custom => {
            return Err(ScheduleError::InvalidGrid(
                "custom spacing requires explicit steps; use TimeGrid::from_steps".into(),
            ))
        }
    };
    TimeGrid::checked(steps, spacing, n)
}

impl TimeGrid {
    /// A custom grid from explicit descending indices ending at 0.
    pub fn from_steps(schedule: &NoiseSchedule, steps: Vec<usize>) -> Result<Self, ScheduleError> {
        Self::checked(steps, SpacingKind::Custom, schedule.n_train())
    }

    fn checked(steps: Vec<usize>, spacing: SpacingKind, n_train: usize) -> Result<Self, ScheduleError> {
        if steps.len() < 2 {
            return Err(ScheduleError::InvalidGrid("need at least two entries".into()));
        }
        if *steps.last().unwrap() != 0 {
            return Err(ScheduleError::InvalidGrid("grid must end at index 0".into()));
        }
        if steps[0] > n_train {
            return Err(ScheduleError::TimeOutOfRange(steps[0], n_train));
        }
        for w in steps.windows(2) {
            if w[1] >= w[0] {
                return Err(ScheduleError::InvalidGrid(format!(
                    "entries must be strictly descending, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { steps, spacing })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn spacing(&self) -> SpacingKind {
        self.spacing
    }

    /// Number of solver steps (one fewer than the entry count).
    pub fn num_steps(&self) -> usize {
        self.steps.len() - 1
    }
}

/// VE-side quantities for a grid: sigmas, log-time step sizes `h_i`,
/// intermediate ratios `r_i`, and the implied intermediate noise levels.
#[derive(Debug, Clone)]
pub struct VeView {
    sigmas: Vec<f64>,
    log_times: Vec<f64>,
    h: Vec<f64>,
    r: Vec<f64>,
}

/// Derive the VE view of a grid with one intermediate ratio per interval.
pub fn dpm_quantities(
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
    r_choice: &[f64],
) -> Result<VeView, ScheduleError> {
    if r_choice.len() != grid.num_steps() {
        return Err(ScheduleError::InvalidGrid(format!(
            "need one ratio per interval: {} ratios for {} intervals",
            r_choice.len(),
            grid.num_steps()
        )));
    }
    for &r in r_choice {
        if !(r > 0.0 && r < 1.0) {
            return Err(ScheduleError::InvalidRatio(r));
        }
    }
    let sigmas: Vec<f64> = grid.steps().iter().map(|&t| schedule.sigma(t)).collect();
    let log_times: Vec<f64> = sigmas.iter().map(|s| -s.ln()).collect();
    let mut h = Vec::with_capacity(grid.num_steps());
    for i in 1..sigmas.len() {
        if sigmas[i] == sigmas[i - 1] {
            return Err(ScheduleError::DegenerateInterval);
        }
        h.push(log_times[i] - log_times[i - 1]);
    }
    Ok(VeView { sigmas, log_times, h, r: r_choice.to_vec() })
}

impl VeView {
    /// Uniform midpoint ratios for every interval.
    pub fn with_midpoint(schedule: &NoiseSchedule, grid: &TimeGrid) -> Result<Self, ScheduleError> {
        dpm_quantities(schedule, grid, &vec![0.5; grid.num_steps()])
    }

    pub fn sigma(&self, entry: usize) -> f64 {
        self.sigmas[entry]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Log time of grid entry `i`; infinite on the clean end.
    pub fn log_time(&self, entry: usize) -> f64 {
        self.log_times[entry]
    }

    /// Step size of interval `i` (from entry `i` to entry `i + 1`).
    pub fn h(&self, interval: usize) -> f64 {
        self.h[interval]
    }

    pub fn r(&self, interval: usize) -> f64 {
        self.r[interval]
    }

    /// Noise level of the intermediate point of interval `i`:
    /// `sigma_s = sigma_cur^(1-r) * sigma_next^r`.
    pub fn intermediate_level(&self, interval: usize) -> NoiseLevel {
        let r = self.r[interval];
        let sigma = self.sigmas[interval].powf(1.0 - r) * self.sigmas[interval + 1].powf(r);
        NoiseLevel::from_sigma(sigma)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}
