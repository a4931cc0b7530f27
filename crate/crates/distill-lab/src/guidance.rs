//! Teacher-guided refinement of student sampling.
//!
//! The guidance signal is a score-distillation residual (in the spirit of
//! SDS, Poole et al., <https://arxiv.org/abs/2209.14988>) evaluated by an
//! exact teacher: renoise a candidate clean estimate to a perturbation
//! level `s`, let the teacher denoise it, and measure how far the candidate
//! sits from the teacher's reconstruction. One proximal step on that loss
//! collapses to a convex interpolation between the student's estimate and
//! the teacher-revised estimate, which is how the guided sampler applies
//! it: during the first `k` steps of a run, the denoised estimate each
//! solver update lands on is replaced by
//! `(1 - lambda) * student + lambda * teacher_revised`.
//!
//! The perturbation time follows one of three renoising schedules:
//! `decreasing` (the next grid time), `same` (the current grid time), or
//! `random` (uniform over interior grid times). Guidance draws come from a
//! dedicated stream so disabling guidance leaves the solver's randomness
//! untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;
use crate::schedule::{NoiseLevel, NoiseSchedule, TimeGrid};
use crate::solvers::{run_with_reviser, EstimateRole, ReviseArgs, SampleSetup, SolverError, Trajectory};
use crate::world::{CfgParams, Denoiser, ModelHandle, WorldError};

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("guidance scale lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("teacher cfg scale must be non-negative, got {0}")]
    InvalidTeacherScale(f64),
    #[error("renoise time has no noise (alpha_bar = 1); the loss coefficient is singular")]
    CleanRenoiseTime,
    #[error("guided steps k = {k} exceeds grid length {len}")]
    TooManyGuidedSteps { k: usize, len: usize },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Rule for choosing the perturbation time `s` relative to the current
/// grid time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenoiseSchedule {
    /// `s` is the next grid time (one step ahead of `t`).
    Decreasing,
    /// `s = t`.
    Same,
    /// `s` drawn uniformly over the grid's interior times.
    Random,
}

/// Whether revision goes through the interpolated estimate or the
/// epsilon-space reparameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuidanceMode {
    #[serde(rename = "interp")]
    Interpolation,
    #[serde(rename = "reparam")]
    Reparameterized,
}

/// Knobs of the guided sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Teacher guidance scale in `[0, 1]`; 0 disables all teacher calls.
    pub lambda: f64,
    /// Number of guided early steps.
    pub k: usize,
    pub renoise: RenoiseSchedule,
    pub mode: GuidanceMode,
    /// CFG scale used for teacher evaluations during guidance.
    pub teacher_w: f64,
    /// Also revise the unconditional renoising anchor of the 2S iterate.
    pub revise_unconditional: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda: 0.02,
            k: 1,
            renoise: RenoiseSchedule::Decreasing,
            mode: GuidanceMode::Interpolation,
            teacher_w: 7.5,
            revise_unconditional: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !(0.0..=1.0).contains(&self.lambda) || !self.lambda.is_finite() {
            return Err(GuidanceError::InvalidLambda(self.lambda));
        }
        if !(self.teacher_w >= 0.0) || !self.teacher_w.is_finite() {
            return Err(GuidanceError::InvalidTeacherScale(self.teacher_w));
        }
        Ok(())
    }

    /// Whether any teacher call will happen.
    pub fn is_active(&self) -> bool {
        self.lambda > 0.0 && self.k > 0
    }

    /// The proximal step size whose gradient step on the distillation loss
    /// at renoise level `s` equals the lambda-interpolation exactly.
    pub fn gamma_for(&self, s: NoiseLevel) -> f64 {
        self.lambda * (1.0 - s.alpha_bar) / (2.0 * s.alpha_bar)
    }
}

/// The guidance scale equivalent to a proximal step of size `gamma` on the
/// distillation loss at renoise level `s`.
pub fn lambda_for_gamma(gamma: f64, s: NoiseLevel) -> f64 {
    2.0 * gamma * s.alpha_bar / (1.0 - s.alpha_bar)
}

/// Perturb a clean estimate to level `s` with fresh noise.
pub fn renoise(x0: &[f64], s: NoiseLevel, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let eps = rng.normal_vec(x0.len());
    (renoise_with(x0, s, &eps), eps)
}

/// Perturb a clean estimate to level `s` with the given noise.
pub fn renoise_with(x0: &[f64], s: NoiseLevel, eps: &[f64]) -> Vec<f64> {
    let a = s.alpha_bar.sqrt();
    let b = (1.0 - s.alpha_bar).sqrt();
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// One evaluation of the distillation loss at a fixed perturbation.
#[derive(Debug, Clone)]
pub struct SdsEvaluation {
    pub loss: f64,
    /// `x - x0_teacher(s)`.
    pub residual: Vec<f64>,
    /// `alpha_bar_s / (1 - alpha_bar_s)`.
    pub coefficient: f64,
    pub eps_used: Vec<f64>,
    pub s: NoiseLevel,
}

/// Distillation loss with noise drawn from `rng`.
pub fn sds_loss(
    x: &[f64],
    teacher: &dyn Denoiser,
    s: NoiseLevel,
    rng: &mut RngStream,
) -> Result<SdsEvaluation, GuidanceError> {
    let eps = rng.normal_vec(x.len());
    sds_loss_with_eps(x, teacher, s, &eps)
}

/// Distillation loss with a fixed, shared noise sample.
pub fn sds_loss_with_eps(
    x: &[f64],
    teacher: &dyn Denoiser,
    s: NoiseLevel,
    eps: &[f64],
) -> Result<SdsEvaluation, GuidanceError> {
    if s.alpha_bar >= 1.0 {
        return Err(GuidanceError::CleanRenoiseTime);
    }
    let x_s = renoise_with(x, s, eps);
    let out = teacher.evaluate(&x_s, s, None)?;
    let coefficient = s.alpha_bar / (1.0 - s.alpha_bar);
    let residual: Vec<f64> = x.iter().zip(&out.x0).map(|(a, b)| a - b).collect();
    let loss = coefficient * residual.iter().map(|d| d * d).sum::<f64>();
    Ok(SdsEvaluation { loss, residual, coefficient, eps_used: eps.to_vec(), s })
}

/// The three algebraic forms of the distillation loss, which must agree:
/// the epsilon residual, the epsilon residual rewritten through Tweedie
/// estimates, and the scaled clean-space residual.
pub fn sds_forms(
    x: &[f64],
    teacher: &dyn Denoiser,
    s: NoiseLevel,
    eps: &[f64],
) -> Result<[f64; 3], GuidanceError> {
    if s.alpha_bar >= 1.0 {
        return Err(GuidanceError::CleanRenoiseTime);
    }
    let x_s = renoise_with(x, s, eps);
    let out = teacher.evaluate(&x_s, s, None)?;
    let form_eps: f64 = out
        .eps
        .iter()
        .zip(eps)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let a = s.alpha_bar.sqrt();
    let b = (1.0 - s.alpha_bar).sqrt();
    let form_tweedie: f64 = (0..x.len())
        .map(|k| {
            let lhs = (x_s[k] - a * out.x0[k]) / b;
            let rhs = (x_s[k] - a * x[k]) / b;
            (lhs - rhs) * (lhs - rhs)
        })
        .sum();
    let coefficient = s.alpha_bar / (1.0 - s.alpha_bar);
    let form_clean: f64 = coefficient
        * x.iter()
            .zip(&out.x0)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>();
    Ok([form_eps, form_tweedie, form_clean])
}

/// Gradient of the distillation loss treating the teacher estimate as
/// constant: `2 * coeff * (x - x0_teacher(s))`. This is deliberately not
/// the full Jacobian gradient.
pub fn sds_gradient(
    x: &[f64],
    teacher: &dyn Denoiser,
    s: NoiseLevel,
    eps: &[f64],
) -> Result<Vec<f64>, GuidanceError> {
    let eval = sds_loss_with_eps(x, teacher, s, eps)?;
    Ok(eval.residual.iter().map(|r| 2.0 * eval.coefficient * r).collect())
}

/// Teacher-revised estimate at a resolved renoise level with fixed noise:
/// `(1 - lambda) * x0_student + lambda * x0_teacher(s)` where the teacher
/// denoises the renoised student estimate under CFG scale `w`.
pub fn revise_estimate_at(
    x0_student: &[f64],
    teacher: &ModelHandle,
    lambda: f64,
    s: NoiseLevel,
    eps: &[f64],
    condition: Option<&str>,
    teacher_w: f64,
) -> Result<Vec<f64>, GuidanceError> {
    let x_s = renoise_with(x0_student, s, eps);
    let pair = teacher.eval_cfg(&x_s, s, condition, CfgParams { w: teacher_w })?;
    Ok(x0_student
        .iter()
        .zip(&pair.x0_combined)
        .map(|(st, te)| (1.0 - lambda) * st + lambda * te)
        .collect())
}

/// Resolve the renoise time for the step at `interval` per the schedule.
/// A time past the clean end clamps to the smallest positive grid time.
pub fn resolve_renoise_time(
    renoise: RenoiseSchedule,
    grid: &TimeGrid,
    interval: usize,
    rng: &mut RngStream,
) -> usize {
    let steps = grid.steps();
    match renoise {
        RenoiseSchedule::Decreasing => {
            let s = steps[interval + 1];
            if s == 0 {
                steps[steps.len() - 2]
            } else {
                s
            }
        }
        RenoiseSchedule::Same => steps[interval],
        RenoiseSchedule::Random => {
            // Interior times exclude both the initial and the clean end.
            let interior = &steps[1..steps.len() - 1];
            if interior.is_empty() {
                steps[interval]
            } else {
                interior[rng.index(interior.len())]
            }
        }
    }
}

/// Teacher-revised estimate chosen and renoised per the config. Consumes
/// guidance randomness only when `lambda > 0`.
#[allow(clippy::too_many_arguments)]
pub fn revise_estimate(
    x0_student: &[f64],
    teacher: &ModelHandle,
    cfg: &GuidanceConfig,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    interval: usize,
    condition: Option<&str>,
    rng: &mut RngStream,
) -> Result<Vec<f64>, GuidanceError> {
    cfg.validate()?;
    if cfg.lambda == 0.0 {
        return Ok(x0_student.to_vec());
    }
    let s_idx = resolve_renoise_time(cfg.renoise, grid, interval, rng);
    let s = schedule.level(s_idx);
    let eps = rng.normal_vec(x0_student.len());
    revise_estimate_at(x0_student, teacher, cfg.lambda, s, &eps, condition, cfg.teacher_w)
}

/// Epsilon-space reparameterization of the revision: blends the states and
/// the epsilon predictions instead of the clean estimates.
pub fn teacher_guided_eps(
    x_t: &[f64],
    x_s: &[f64],
    eps_student: &[f64],
    eps_teacher: &[f64],
    lambda: f64,
    t: NoiseLevel,
) -> (Vec<f64>, Vec<f64>) {
    let x_tilde: Vec<f64> = x_t
        .iter()
        .zip(x_s)
        .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
        .collect();
    let a = t.alpha_bar.sqrt();
    let b = (1.0 - t.alpha_bar).sqrt();
    let x0_new: Vec<f64> = (0..x_t.len())
        .map(|k| {
            let eps_mix = eps_student[k] + lambda * (eps_teacher[k] - eps_student[k]);
            (x_tilde[k] - b * eps_mix) / a
        })
        .collect();
    (x0_new, x_tilde)
}

/// Run a guided sampling trajectory: the student samples as usual, and for
/// the first `k` steps the estimate each update lands on is replaced by its
/// teacher-revised counterpart. With guidance inactive the run is
/// bit-identical to plain sampling and performs no teacher calls.
pub fn run_distillation_pp(
    setup: &SampleSetup,
    teacher: &ModelHandle,
    guidance: &GuidanceConfig,
    init: Option<&[f64]>,
    solver_rng: &mut RngStream,
    guidance_rng: &mut RngStream,
) -> Result<Trajectory, GuidanceError> {
    guidance.validate()?;
    if guidance.k > setup.grid.num_steps() {
        return Err(GuidanceError::TooManyGuidedSteps {
            k: guidance.k,
            len: setup.grid.num_steps(),
        });
    }
    if !guidance.is_active() {
        return Ok(run_with_reviser(setup, init, solver_rng, &mut None)?);
    }
    let grid = setup.grid;
    let schedule = setup.schedule;
    let condition = setup.condition;
    let mut hook = |args: ReviseArgs| -> Result<Vec<f64>, SolverError> {
        if args.interval >= guidance.k {
            return Ok(args.estimate.to_vec());
        }
        let revise_condition = match args.role {
            EstimateRole::Primary => condition,
            EstimateRole::Anchor if guidance.revise_unconditional => None,
            EstimateRole::Anchor => return Ok(args.estimate.to_vec()),
        };
        match guidance.mode {
            GuidanceMode::Interpolation => revise_estimate(
                args.estimate,
                teacher,
                guidance,
                grid,
                schedule,
                args.interval,
                revise_condition,
                guidance_rng,
            )
            .map_err(|e| SolverError::Revision(e.to_string())),
            GuidanceMode::Reparameterized => {
                let s_idx = resolve_renoise_time(guidance.renoise, grid, args.interval, guidance_rng);
                let s = schedule.level(s_idx);
                let eps = guidance_rng.normal_vec(args.estimate.len());
                let x_s = renoise_with(args.estimate, s, &eps);
                let pair = teacher
                    .eval_cfg(&x_s, s, revise_condition, CfgParams { w: guidance.teacher_w })
                    .map_err(|e| SolverError::Revision(e.to_string()))?;
                let (x0_new, _) = teacher_guided_eps(
                    args.state,
                    &x_s,
                    args.eps,
                    &pair.eps_combined,
                    guidance.lambda,
                    args.level,
                );
                Ok(x0_new)
            }
        }
    };
    let mut hook_ref: Option<&mut crate::solvers::ReviseHook> = Some(&mut hook);
    Ok(run_with_reviser(setup, init, solver_rng, &mut hook_ref)?)
}
