//! Sampling iterates and the trajectory sampler.
//!
//! All state lives in VP variables; the VE view (`sigma`, log time) is
//! derived per step. The deterministic first-order iterates are DDIM
//! (Denoising Diffusion Implicit Models, Song et al.,
//! <https://arxiv.org/abs/2010.02502>) and its VE rewrite as an Euler step
//! over `sigma`. Ancestral variants split each target noise level into a
//! deterministic contraction plus fresh Gaussian noise. The second-order
//! iterates follow DPM-Solver++ (<https://arxiv.org/abs/2211.01095>) in its
//! 2S (intermediate-point) and 2M (multistep-history) forms, matching the
//! reference implementations in k-diffusion.
//!
//! Every iterate is parameterized over a [`Denoiser`] behind a
//! [`ModelHandle`], takes classifier-free guidance into account, and accepts
//! an optional estimate-revision hook so guided sampling can modulate the
//! denoised estimate without changing the solver algebra.
//!
//! Intervals whose target sigma is exactly zero fall back to the first-order
//! update (which lands on the denoised estimate), as the reference
//! implementations do; the second-order corrections are undefined there.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;
use crate::schedule::{NoiseLevel, NoiseSchedule, TimeGrid};
use crate::world::{CfgParams, Denoiser, ModelHandle, WorldError};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("grid order violation: t_cur {t_cur} must not precede t_next {t_next}")]
    OrderViolation { t_cur: usize, t_next: usize },
    #[error("intermediate ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("missing history for a multistep correction")]
    MissingHistory,
    #[error("ancestral sampling requires eta >= 0, got {0}")]
    InvalidEta(f64),
    #[error("incompatible init: expected dimension {expected}, got {got}")]
    BadInit { expected: usize, got: usize },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("estimate revision failed: {0}")]
    Revision(String),
}

/// Which sampling iterate to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Ddim,
    EulerVe,
    EulerAncestral,
    Dpmpp2s,
    Dpmpp2sAncestral,
    Dpmpp2m,
    Dpmpp2mAncestral,
}

impl SolverKind {
    /// Ancestral kinds draw noise; deterministic kinds must not.
    pub fn is_ancestral(&self) -> bool {
        matches!(
            self,
            SolverKind::EulerAncestral | SolverKind::Dpmpp2sAncestral | SolverKind::Dpmpp2mAncestral
        )
    }
}

/// How the renoising anchor of the 2S iterate treats guidance: `CfgPp`
/// renoises with the unconditional estimate, `Cfg` with the combined one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CfgMode {
    Cfg,
    CfgPp,
}

/// Solver knobs beyond the kind itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Ancestral noise fraction; 0 recovers the deterministic iterate and 1
    /// is the standard full split.
    pub eta: f64,
    /// Intermediate-point ratio for the 2S iterate.
    pub r: f64,
    pub cfg_mode: CfgMode,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { eta: 1.0, r: 0.5, cfg_mode: CfgMode::CfgPp }
    }
}

/// Deterministic/noise split of one ancestral step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AncestralSplit {
    pub sigma_down: f64,
    pub sigma_up: f64,
}

/// Split the target level `sigma_next` into a deterministic part
/// `sigma_down` and a noise part `sigma_up` with
/// `sigma_down^2 + sigma_up^2 = sigma_next^2`.
pub fn ancestral_split(sigma_cur: f64, sigma_next: f64, eta: f64) -> Result<AncestralSplit, SolverError> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(SolverError::InvalidEta(eta));
    }
    if sigma_next == 0.0 || sigma_cur == 0.0 {
        return Ok(AncestralSplit { sigma_down: sigma_next, sigma_up: 0.0 });
    }
    let var_up = sigma_next.powi(2) * (sigma_cur.powi(2) - sigma_next.powi(2)) / sigma_cur.powi(2);
    let sigma_up = (eta * var_up.max(0.0).sqrt()).min(sigma_next);
    let sigma_down = (sigma_next.powi(2) - sigma_up.powi(2)).max(0.0).sqrt();
    Ok(AncestralSplit { sigma_down, sigma_up })
}

/// Output of one solver step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub x_next: Vec<f64>,
    pub x0_hat: Vec<f64>,
    pub eps: Vec<f64>,
}

/// One DDIM iterate: contract the Tweedie estimate to the next level and
/// re-add the predicted noise.
pub fn ddim_step(
    denoiser: &dyn Denoiser,
    x: &[f64],
    t_cur: usize,
    t_next: usize,
    schedule: &NoiseSchedule,
    condition: Option<&str>,
) -> Result<StepOutput, SolverError> {
    if t_next > t_cur {
        return Err(SolverError::OrderViolation { t_cur, t_next });
    }
    let out = denoiser.evaluate(x, schedule.level(t_cur), condition)?;
    let x_next = ddim_map(&out.x0, &out.eps, schedule.level(t_next));
    Ok(StepOutput { x_next, x0_hat: out.x0, eps: out.eps })
}

fn ddim_map(x0: &[f64], eps: &[f64], lvl_next: NoiseLevel) -> Vec<f64> {
    let a = lvl_next.alpha_bar.sqrt();
    let b = (1.0 - lvl_next.alpha_bar).sqrt();
    x0.iter().zip(eps).map(|(x0i, ei)| a * x0i + b * ei).collect()
}

/// The same iterate written as a VE Euler step over `sigma`.
pub fn euler_ve_step(
    denoiser: &dyn Denoiser,
    x: &[f64],
    t_cur: usize,
    t_next: usize,
    schedule: &NoiseSchedule,
    condition: Option<&str>,
) -> Result<StepOutput, SolverError> {
    if t_next > t_cur {
        return Err(SolverError::OrderViolation { t_cur, t_next });
    }
    let lvl_c = schedule.level(t_cur);
    let lvl_n = schedule.level(t_next);
    let out = denoiser.evaluate(x, lvl_c, condition)?;
    let x_next = euler_ve_map(x, &out.x0, &out.x0, lvl_c, lvl_n.sigma, lvl_n);
    Ok(StepOutput { x_next, x0_hat: out.x0, eps: out.eps })
}

/// VE Euler update with a possibly revised leading estimate: the slope is
/// taken from the original estimate, the landing point from the revised one.
fn euler_ve_map(
    x: &[f64],
    x0_lead: &[f64],
    x0_slope: &[f64],
    lvl_cur: NoiseLevel,
    sigma_target: f64,
    lvl_out: NoiseLevel,
) -> Vec<f64> {
    let inv_scale = 1.0 / lvl_cur.alpha_bar.sqrt();
    let out_scale = lvl_out.alpha_bar.sqrt();
    let ratio = if lvl_cur.sigma == 0.0 { 0.0 } else { sigma_target / lvl_cur.sigma };
    (0..x.len())
        .map(|k| {
            let y = x[k] * inv_scale;
            out_scale * (x0_lead[k] + ratio * (y - x0_slope[k]))
        })
        .collect()
}

/// One Euler Ancestral iterate: a larger deterministic contraction to
/// `sigma_down`, then fresh noise at `sigma_up`.
#[allow(clippy::too_many_arguments)]
pub fn euler_ancestral_step(
    denoiser: &dyn Denoiser,
    x: &[f64],
    t_cur: usize,
    split: AncestralSplit,
    t_next: usize,
    schedule: &NoiseSchedule,
    rng: &mut RngStream,
    condition: Option<&str>,
) -> Result<StepOutput, SolverError> {
    if t_next > t_cur {
        return Err(SolverError::OrderViolation { t_cur, t_next });
    }
    let lvl_c = schedule.level(t_cur);
    let lvl_n = schedule.level(t_next);
    let out = denoiser.evaluate(x, lvl_c, condition)?;
    let mut x_next = euler_ve_map(x, &out.x0, &out.x0, lvl_c, split.sigma_down, lvl_n);
    if split.sigma_up > 0.0 {
        let scale = lvl_n.alpha_bar.sqrt() * split.sigma_up;
        for v in x_next.iter_mut() {
            *v += scale * rng.normal();
        }
    }
    Ok(StepOutput { x_next, x0_hat: out.x0, eps: out.eps })
}

/// Which estimate of a step a revision hook is being offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EstimateRole {
    /// The denoised estimate the update lands on.
    Primary,
    /// The renoising anchor of the 2S iterate.
    Anchor,
}

/// Context handed to a revision hook: the estimate, the level and state it
/// was formed at, its coupled epsilon, and where in the run it sits.
pub(crate) struct ReviseArgs<'b> {
    pub estimate: &'b [f64],
    pub level: NoiseLevel,
    pub interval: usize,
    pub state: &'b [f64],
    pub eps: &'b [f64],
    pub role: EstimateRole,
}

/// Hook revising a denoised estimate mid-step.
pub(crate) type ReviseHook<'a> = dyn FnMut(ReviseArgs) -> Result<Vec<f64>, SolverError> + 'a;

/// One DPM-Solver++ 2S iterate with an intermediate evaluation point.
#[allow(clippy::too_many_arguments)]
pub fn dpmpp_2s_step(
    model: &ModelHandle,
    x: &[f64],
    lvl_cur: NoiseLevel,
    lvl_next: NoiseLevel,
    r: f64,
    cfg: CfgParams,
    condition: Option<&str>,
    mode: CfgMode,
) -> Result<StepOutput, SolverError> {
    let (y_det, x0, eps) =
        dpmpp_2s_core(model, x, lvl_cur, lvl_next.sigma, r, cfg, condition, mode, &mut None, 0)?;
    let scale = lvl_next.alpha_bar.sqrt();
    Ok(StepOutput { x_next: y_det.iter().map(|v| v * scale).collect(), x0_hat: x0, eps })
}

/// Core of the 2S iterate in VE coordinates, targeting `sigma_target`.
#[allow(clippy::too_many_arguments)]
fn dpmpp_2s_core(
    model: &ModelHandle,
    x: &[f64],
    lvl_cur: NoiseLevel,
    sigma_target: f64,
    r: f64,
    cfg: CfgParams,
    condition: Option<&str>,
    mode: CfgMode,
    revise: &mut Option<&mut ReviseHook>,
    interval: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), SolverError> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(SolverError::InvalidRatio(r));
    }
    let pair = model.eval_cfg(x, lvl_cur, condition, cfg)?;
    if sigma_target == 0.0 {
        // Terminal interval: first-order update lands on the estimate.
        let x0_used = apply_hook(
            revise,
            ReviseArgs {
                estimate: &pair.x0_combined,
                level: lvl_cur,
                interval,
                state: x,
                eps: &pair.eps_combined,
                role: EstimateRole::Primary,
            },
        )?;
        let y = euler_ve_map(x, &x0_used, &pair.x0_combined, lvl_cur, 0.0, NoiseLevel::from_sigma(0.0));
        return Ok((y, x0_used, pair.eps_combined));
    }
    let h = (lvl_cur.sigma / sigma_target).ln();
    let (anchor_raw, anchor_eps) = match mode {
        CfgMode::CfgPp => (&pair.x0_uncond, &pair.eps_uncond),
        CfgMode::Cfg => (&pair.x0_combined, &pair.eps_combined),
    };
    let anchor = apply_hook(
        revise,
        ReviseArgs {
            estimate: anchor_raw,
            level: lvl_cur,
            interval,
            state: x,
            eps: anchor_eps,
            role: EstimateRole::Anchor,
        },
    )?;
    let sigma_mid = lvl_cur.sigma.powf(1.0 - r) * sigma_target.powf(r);
    let lvl_mid = NoiseLevel::from_sigma(sigma_mid);
    let inv_scale = 1.0 / lvl_cur.alpha_bar.sqrt();
    let decay_mid = (-r * h).exp();
    let grow_mid = -(-r * h).exp_m1();
    let u_vp: Vec<f64> = (0..x.len())
        .map(|k| lvl_mid.alpha_bar.sqrt() * (decay_mid * x[k] * inv_scale + grow_mid * anchor[k]))
        .collect();
    let mid = model.eval_cfg(&u_vp, lvl_mid, condition, cfg)?;
    let est_used = apply_hook(
        revise,
        ReviseArgs {
            estimate: &mid.x0_combined,
            level: lvl_mid,
            interval,
            state: &u_vp,
            eps: &mid.eps_combined,
            role: EstimateRole::Primary,
        },
    )?;
    let decay = (-h).exp();
    let grow = -(-h).exp_m1();
    let y_next: Vec<f64> = (0..x.len())
        .map(|k| {
            grow * anchor[k] + grow / (2.0 * r) * (est_used[k] - anchor[k]) + decay * x[k] * inv_scale
        })
        .collect();
    Ok((y_next, est_used, pair.eps_combined))
}

/// One DPM-Solver++ 2M iterate. `history` carries the previous denoised
/// estimate and `h_prev` the previous log-time step; both must be present
/// for a correction step.
#[allow(clippy::too_many_arguments)]
pub fn dpmpp_2m_step(
    model: &ModelHandle,
    x: &[f64],
    lvl_cur: NoiseLevel,
    lvl_next: NoiseLevel,
    h_prev: Option<f64>,
    history: Option<&[f64]>,
    cfg: CfgParams,
    condition: Option<&str>,
) -> Result<StepOutput, SolverError> {
    if history.is_some() != h_prev.is_some() {
        return Err(SolverError::MissingHistory);
    }
    let (y_det, x0, eps) = dpmpp_2m_core(
        model,
        x,
        lvl_cur,
        lvl_next.sigma,
        h_prev,
        history,
        cfg,
        condition,
        &mut None,
        0,
    )?;
    let scale = lvl_next.alpha_bar.sqrt();
    Ok(StepOutput { x_next: y_det.iter().map(|v| v * scale).collect(), x0_hat: x0, eps })
}

/// Core of the 2M iterate in VE coordinates, targeting `sigma_target`.
/// Returns the VE state plus the original (unrevised) estimate for history.
#[allow(clippy::too_many_arguments)]
fn dpmpp_2m_core(
    model: &ModelHandle,
    x: &[f64],
    lvl_cur: NoiseLevel,
    sigma_target: f64,
    h_prev: Option<f64>,
    history: Option<&[f64]>,
    cfg: CfgParams,
    condition: Option<&str>,
    revise: &mut Option<&mut ReviseHook>,
    interval: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), SolverError> {
    let pair = model.eval_cfg(x, lvl_cur, condition, cfg)?;
    let x0 = &pair.x0_combined;
    let x0_used = apply_hook(
        revise,
        ReviseArgs {
            estimate: x0,
            level: lvl_cur,
            interval,
            state: x,
            eps: &pair.eps_combined,
            role: EstimateRole::Primary,
        },
    )?;
    let inv_scale = 1.0 / lvl_cur.alpha_bar.sqrt();
    let y_next: Vec<f64> = match (history, h_prev) {
        (Some(prev), Some(h_prev)) if sigma_target > 0.0 => {
            let h = (lvl_cur.sigma / sigma_target).ln();
            let r = h_prev / h;
            let decay = (-h).exp();
            let grow = -(-h).exp_m1();
            (0..x.len())
                .map(|k| {
                    x0_used[k] - decay * x0[k]
                        + grow / (2.0 * r) * (x0[k] - prev[k])
                        + decay * x[k] * inv_scale
                })
                .collect()
        }
        _ => {
            // First iteration or terminal interval: first-order update with
            // the revised estimate as the landing point.
            let decay = if sigma_target == 0.0 { 0.0 } else { sigma_target / lvl_cur.sigma };
            (0..x.len())
                .map(|k| x0_used[k] + decay * (x[k] * inv_scale - x0[k]))
                .collect()
        }
    };
    Ok((y_next, x0_used, pair.eps_combined))
}

fn apply_hook(revise: &mut Option<&mut ReviseHook>, args: ReviseArgs) -> Result<Vec<f64>, SolverError> {
    match revise {
        Some(hook) => hook(args),
        None => Ok(args.estimate.to_vec()),
    }
}

/// One record per solver step: the state entering the step, the estimate it
/// used, and the epsilon prediction at the step's start.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub x0_hat: Vec<f64>,
    pub eps: Vec<f64>,
}

/// Ordered record of a single sampling run plus the stream that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub stream: u64,
    pub drew_init: bool,
    pub records: Vec<TrajectoryRecord>,
    pub final_x: Vec<f64>,
}

/// Everything a sampling run needs besides the initial state and stream.
#[derive(Clone)]
pub struct SampleSetup<'a> {
    pub model: &'a ModelHandle,
    pub solver: SolverKind,
    pub opts: SolverOptions,
    pub grid: &'a TimeGrid,
    pub schedule: &'a NoiseSchedule,
    pub cfg: CfgParams,
    pub condition: Option<&'a str>,
}

/// Run a full sampling trajectory. When `init` is absent the start state is
/// drawn standard normal from `rng`.
pub fn sample(
    setup: &SampleSetup,
    init: Option<&[f64]>,
    rng: &mut RngStream,
) -> Result<Trajectory, SolverError> {
    run_with_reviser(setup, init, rng, &mut None)
}

/// Re-run a trajectory from its recorded seed and stream and check the
/// replay is bit-identical.
pub fn replay_matches(setup: &SampleSetup, traj: &Trajectory) -> Result<bool, SolverError> {
    let mut rng = RngStream::new(traj.seed, traj.stream);
    let replay = if traj.drew_init {
        sample(setup, None, &mut rng)?
    } else {
        sample(setup, Some(&traj.records[0].x), &mut rng)?
    };
    Ok(replay == *traj)
}

pub(crate) fn run_with_reviser(
    setup: &SampleSetup,
    init: Option<&[f64]>,
    rng: &mut RngStream,
    revise: &mut Option<&mut ReviseHook>,
) -> Result<Trajectory, SolverError> {
    let dim = setup.model.dim();
    let steps = setup.grid.steps();
    let (mut x, drew_init) = match init {
        Some(x0) => {
            if x0.len() != dim {
                return Err(SolverError::BadInit { expected: dim, got: x0.len() });
            }
            (x0.to_vec(), false)
        }
        None => (rng.normal_vec(dim), true),
    };
    let mut records = Vec::with_capacity(setup.grid.num_steps());
    let mut history: Option<Vec<f64>> = None;
    let mut h_prev: Option<f64> = None;
    for i in 0..setup.grid.num_steps() {
        let lvl_c = setup.schedule.level(steps[i]);
        let lvl_n = setup.schedule.level(steps[i + 1]);
        let (x_next, x0_used, eps) = match setup.solver {
            SolverKind::Ddim => {
                let pair = setup.model.eval_cfg(&x, lvl_c, setup.condition, setup.cfg)?;
                let x0_used = apply_hook(
                    revise,
                    ReviseArgs {
                        estimate: &pair.x0_combined,
                        level: lvl_c,
                        interval: i,
                        state: &x,
                        eps: &pair.eps_combined,
                        role: EstimateRole::Primary,
                    },
                )?;
                (ddim_map(&x0_used, &pair.eps_combined, lvl_n), x0_used, pair.eps_combined)
            }
            SolverKind::EulerVe => {
                let pair = setup.model.eval_cfg(&x, lvl_c, setup.condition, setup.cfg)?;
                let x0_used = apply_hook(
                    revise,
                    ReviseArgs {
                        estimate: &pair.x0_combined,
                        level: lvl_c,
                        interval: i,
                        state: &x,
                        eps: &pair.eps_combined,
                        role: EstimateRole::Primary,
                    },
                )?;
                let x_next =
                    euler_ve_map(&x, &x0_used, &pair.x0_combined, lvl_c, lvl_n.sigma, lvl_n);
                (x_next, x0_used, pair.eps_combined)
            }
            SolverKind::EulerAncestral => {
                let split = ancestral_split(lvl_c.sigma, lvl_n.sigma, setup.opts.eta)?;
                let pair = setup.model.eval_cfg(&x, lvl_c, setup.condition, setup.cfg)?;
                let x0_used = apply_hook(
                    revise,
                    ReviseArgs {
                        estimate: &pair.x0_combined,
                        level: lvl_c,
                        interval: i,
                        state: &x,
                        eps: &pair.eps_combined,
                        role: EstimateRole::Primary,
                    },
                )?;
                let mut x_next =
                    euler_ve_map(&x, &x0_used, &pair.x0_combined, lvl_c, split.sigma_down, lvl_n);
                if split.sigma_up > 0.0 {
                    let scale = lvl_n.alpha_bar.sqrt() * split.sigma_up;
                    for v in x_next.iter_mut() {
                        *v += scale * rng.normal();
                    }
                }
                (x_next, x0_used, pair.eps_combined)
            }
            SolverKind::Dpmpp2s | SolverKind::Dpmpp2sAncestral => {
                let split = if setup.solver.is_ancestral() {
                    ancestral_split(lvl_c.sigma, lvl_n.sigma, setup.opts.eta)?
                } else {
                    AncestralSplit { sigma_down: lvl_n.sigma, sigma_up: 0.0 }
                };
                let (y_det, x0_used, eps) = dpmpp_2s_core(
                    setup.model,
                    &x,
                    lvl_c,
                    split.sigma_down,
                    setup.opts.r,
                    setup.cfg,
                    setup.condition,
                    setup.opts.cfg_mode,
                    revise,
                    i,
                )?;
                let scale = lvl_n.alpha_bar.sqrt();
                let mut x_next: Vec<f64> = y_det.iter().map(|v| v * scale).collect();
                if split.sigma_up > 0.0 {
                    let noise_scale = scale * split.sigma_up;
                    for v in x_next.iter_mut() {
                        *v += noise_scale * rng.normal();
                    }
                }
                (x_next, x0_used, eps)
            }
            SolverKind::Dpmpp2m | SolverKind::Dpmpp2mAncestral => {
                let split = if setup.solver.is_ancestral() {
                    ancestral_split(lvl_c.sigma, lvl_n.sigma, setup.opts.eta)?
                } else {
                    AncestralSplit { sigma_down: lvl_n.sigma, sigma_up: 0.0 }
                };
                let (y_det, x0_used, eps, original) = {
                    let pair_h = dpmpp_2m_core(
                        setup.model,
                        &x,
                        lvl_c,
                        split.sigma_down,
                        h_prev,
                        history.as_deref(),
                        setup.cfg,
                        setup.condition,
                        revise,
                        i,
                    )?;
                    // History keeps the original estimate; re-derive it from
                    // eps to avoid a second evaluation.
                    let original = crate::world::cfg_tweedie(&x, lvl_c, &pair_h.2);
                    (pair_h.0, pair_h.1, pair_h.2, original)
                };
                let scale = lvl_n.alpha_bar.sqrt();
                let mut x_next: Vec<f64> = y_det.iter().map(|v| v * scale).collect();
                if split.sigma_up > 0.0 {
                    let noise_scale = scale * split.sigma_up;
                    for v in x_next.iter_mut() {
                        *v += noise_scale * rng.normal();
                    }
                }
                history = Some(original);
                h_prev = if lvl_n.sigma > 0.0 {
                    Some((lvl_c.sigma / lvl_n.sigma).ln())
                } else {
                    None
                };
                (x_next, x0_used, eps)
            }
        };
        records.push(TrajectoryRecord { t: steps[i], x: x.clone(), x0_hat: x0_used, eps });
        x = x_next;
    }
    Ok(Trajectory { seed: rng.seed(), stream: rng.stream(), drew_init, records, final_x: x })
}
