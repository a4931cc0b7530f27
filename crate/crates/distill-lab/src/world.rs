//! Gaussian-mixture data distributions and every evaluable denoiser.
//!
//! The data distribution is a weighted mixture of axis-aligned Gaussians.
//! Conditioning is modeled as a label attached to each component: a
//! conditional query restricts the mixture to the matching components with
//! renormalized weights, and the null condition selects the full mixture.
//! Because the marginal of a Gaussian mixture under the forward kernel is
//! again a Gaussian mixture, the posterior mean (the Tweedie denoised
//! estimate), the score, and the marginal density are all available in
//! closed form. The exact teacher evaluates these directly; student
//! denoisers inject a controlled gap (shifted means, perturbed weights, or a
//! coarse endpoint integrator) behind the same interface.
//!
//! Responsibilities are computed in the log domain (log-sum-exp), so probes
//! far in the tails stay finite.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::{NoiseLevel, NoiseSchedule};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("mixture must have at least one component")]
    EmptyMixture,
    #[error("component {index}: {reason}")]
    InvalidComponent { index: usize, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown condition label `{0}`")]
    UnknownCondition(String),
    #[error("invalid student spec: {0}")]
    InvalidStudent(String),
    #[error("cfg scale must be non-negative, got {0}")]
    InvalidCfgScale(f64),
}

/// One mixture component with a diagonal covariance and a condition label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    #[serde(default)]
    pub condition: String,
}

/// The ground-truth data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWorld {
    dim: usize,
    components: Vec<Component>,
}

impl MixtureWorld {
    /// Validates and normalizes the component weights.
    pub fn new(dim: usize, mut components: Vec<Component>) -> Result<Self, WorldError> {
        if components.is_empty() {
            return Err(WorldError::EmptyMixture);
        }
        let mut total = 0.0;
        for (index, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.var.len() != dim {
                return Err(WorldError::InvalidComponent {
                    index,
                    reason: format!(
                        "mean/var must have length {dim}, got {}/{}",
                        c.mean.len(),
                        c.var.len()
                    ),
                });
            }
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(WorldError::InvalidComponent {
                    index,
                    reason: format!("weight must be finite and non-negative, got {}", c.weight),
                });
            }
            if c.var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(WorldError::InvalidComponent {
                    index,
                    reason: "variances must be positive and finite".into(),
                });
            }
            total += c.weight;
        }
        if total <= 0.0 {
            return Err(WorldError::InvalidComponent {
                index: 0,
                reason: "weights must not all be zero".into(),
            });
        }
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self { dim, components })
    }

    /// Standard normal data in `dim` dimensions, single unlabeled component.
    pub fn standard_normal(dim: usize) -> Self {
        Self::new(
            dim,
            vec![Component {
                weight: 1.0,
                mean: vec![0.0; dim],
                var: vec![1.0; dim],
                condition: String::new(),
            }],
        )
        .expect("standard normal is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Distinct condition labels in component order.
    pub fn condition_labels(&self) -> Vec<&str> {
        let mut labels: Vec<&str> = Vec::new();
        for c in &self.components {
            if !labels.contains(&c.condition.as_str()) {
                labels.push(&c.condition);
            }
        }
        labels
    }

    /// Total prior mass carried by a condition label.
    pub fn condition_prior(&self, condition: &str) -> f64 {
        self.components
            .iter()
            .filter(|c| c.condition == condition)
            .map(|c| c.weight)
            .sum()
    }

    fn selected(&self, condition: Option<&str>) -> Result<Vec<usize>, WorldError> {
        match condition {
            None => Ok((0..self.components.len()).collect()),
            Some(label) => {
                let idx: Vec<usize> = self
                    .components
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.condition == label)
                    .map(|(i, _)| i)
                    .collect();
                if idx.is_empty() {
                    Err(WorldError::UnknownCondition(label.to_string()))
                } else {
                    Ok(idx)
                }
            }
        }
    }

    /// A copy with every component mean shifted by `delta`.
    pub fn shifted(&self, delta: &[f64]) -> Result<Self, WorldError> {
        if delta.len() != self.dim {
            return Err(WorldError::DimensionMismatch { expected: self.dim, got: delta.len() });
        }
        let components = self
            .components
            .iter()
            .map(|c| Component {
                weight: c.weight,
                mean: c.mean.iter().zip(delta).map(|(m, d)| m + d).collect(),
                var: c.var.clone(),
                condition: c.condition.clone(),
            })
            .collect();
        Self::new(self.dim, components)
    }

    /// A copy with weights multiplied by `1 + perturbation[i]`, clamped at
    /// zero and renormalized.
    pub fn reweighted(&self, perturbation: &[f64]) -> Result<Self, WorldError> {
        if perturbation.len() != self.components.len() {
            return Err(WorldError::InvalidStudent(format!(
                "need one perturbation per component: {} for {}",
                perturbation.len(),
                self.components.len()
            )));
        }
        let components = self
            .components
            .iter()
            .zip(perturbation)
            .map(|(c, p)| Component {
                weight: (c.weight * (1.0 + p)).max(0.0),
                mean: c.mean.clone(),
                var: c.var.clone(),
                condition: c.condition.clone(),
            })
            .collect();
        Self::new(self.dim, components)
    }
}

/// Mixture parameters of the noisy marginal at one noise level.
#[derive(Debug, Clone)]
pub struct MarginalMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

/// Per-component means `sqrt(alpha_bar) * mu` and variances
/// `alpha_bar * v + (1 - alpha_bar)`, with condition-restricted weights.
pub fn marginal_params(
    world: &MixtureWorld,
    level: NoiseLevel,
    condition: Option<&str>,
) -> Result<MarginalMixture, WorldError> {
    let idx = world.selected(condition)?;
    let ab = level.alpha_bar;
    let scale = ab.sqrt();
    let total: f64 = idx.iter().map(|&i| world.components[i].weight).sum();
    let mut weights = Vec::with_capacity(idx.len());
    let mut means = Vec::with_capacity(idx.len());
    let mut vars = Vec::with_capacity(idx.len());
    for &i in &idx {
        let c = &world.components[i];
        weights.push(c.weight / total);
        means.push(c.mean.iter().map(|m| scale * m).collect());
        vars.push(c.var.iter().map(|v| ab * v + (1.0 - ab)).collect());
    }
    Ok(MarginalMixture { weights, means, vars })
}

/// Log density of the noisy marginal at `x`.
pub fn log_marginal_density(
    world: &MixtureWorld,
    level: NoiseLevel,
    x: &[f64],
    condition: Option<&str>,
) -> Result<f64, WorldError> {
    let marginal = marginal_params(world, level, condition)?;
    if x.len() != world.dim {
        return Err(WorldError::DimensionMismatch { expected: world.dim, got: x.len() });
    }
    let logs: Vec<f64> = (0..marginal.weights.len())
        .map(|i| marginal.weights[i].ln() + log_normal_diag(x, &marginal.means[i], &marginal.vars[i]))
        .collect();
    Ok(log_sum_exp(&logs))
}

fn log_normal_diag(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..x.len() {
        let d = x[k] - mean[k];
        acc += -0.5 * ((2.0 * std::f64::consts::PI * var[k]).ln() + d * d / var[k]);
    }
    acc
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Posterior responsibilities of the selected components at `x`.
fn responsibilities(marginal: &MarginalMixture, x: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = (0..marginal.weights.len())
        .map(|i| marginal.weights[i].ln() + log_normal_diag(x, &marginal.means[i], &marginal.vars[i]))
        .collect();
    let lse = log_sum_exp(&logs);
    logs.iter().map(|l| (l - lse).exp()).collect()
}

/// Exact posterior mean `E[x0 | x_t]` and the coupled epsilon prediction.
pub fn teacher_denoise(
    world: &MixtureWorld,
    level: NoiseLevel,
    x: &[f64],
    condition: Option<&str>,
) -> Result<DenoiseOutput, WorldError> {
    if x.len() != world.dim {
        return Err(WorldError::DimensionMismatch { expected: world.dim, got: x.len() });
    }
    let idx = world.selected(condition)?;
    let marginal = marginal_params(world, level, condition)?;
    let pi = responsibilities(&marginal, x);
    let ab = level.alpha_bar;
    let scale = ab.sqrt();
    let mut x0 = vec![0.0; world.dim];
    for (j, &i) in idx.iter().enumerate() {
        let c = &world.components[i];
        for k in 0..world.dim {
            let shrink = scale * c.var[k] / marginal.vars[j][k];
            x0[k] += pi[j] * (c.mean[k] + shrink * (x[k] - marginal.means[j][k]));
        }
    }
    Ok(DenoiseOutput::from_x0(x, level, x0))
}

/// Exact score of the noisy marginal, `grad_x log p_t(x)`.
pub fn teacher_score(
    world: &MixtureWorld,
    level: NoiseLevel,
    x: &[f64],
    condition: Option<&str>,
) -> Result<Vec<f64>, WorldError> {
    if x.len() != world.dim {
        return Err(WorldError::DimensionMismatch { expected: world.dim, got: x.len() });
    }
    let marginal = marginal_params(world, level, condition)?;
    let pi = responsibilities(&marginal, x);
    let mut score = vec![0.0; world.dim];
    for j in 0..marginal.weights.len() {
        for k in 0..world.dim {
            score[k] += pi[j] * (marginal.means[j][k] - x[k]) / marginal.vars[j][k];
        }
    }
    Ok(score)
}

/// Identity of a denoiser behind the common evaluation contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserTag {
    TeacherExact,
    StudentBiased,
    StudentConsistency,
    CfgWrapped,
    TeacherGuided,
}

/// Epsilon prediction and Tweedie estimate for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutput {
    pub eps: Vec<f64>,
    pub x0: Vec<f64>,
}

impl DenoiseOutput {
    /// Couple an x0 estimate to its epsilon prediction at the given level.
    /// At the clean end the epsilon is defined as zero.
    pub fn from_x0(x: &[f64], level: NoiseLevel, x0: Vec<f64>) -> Self {
        let ab = level.alpha_bar;
        let noise = (1.0 - ab).sqrt();
        let eps = if noise == 0.0 {
            vec![0.0; x.len()]
        } else {
            let scale = ab.sqrt();
            x.iter().zip(&x0).map(|(xi, x0i)| (xi - scale * x0i) / noise).collect()
        };
        Self { eps, x0 }
    }

    /// Couple an epsilon prediction to its Tweedie estimate.
    pub fn from_eps(x: &[f64], level: NoiseLevel, eps: Vec<f64>) -> Self {
        let x0 = tweedie_from_eps(x, level, &eps);
        Self { eps, x0 }
    }
}

fn tweedie_from_eps(x: &[f64], level: NoiseLevel, eps: &[f64]) -> Vec<f64> {
    let scale = level.alpha_bar.sqrt();
    let noise = (1.0 - level.alpha_bar).sqrt();
    x.iter().zip(eps).map(|(xi, e)| (xi - noise * e) / scale).collect()
}

/// The evaluable model interface: epsilon prediction plus Tweedie estimate
/// at a point, noise level, and condition.
pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;
    fn tag(&self) -> DenoiserTag;
    fn evaluate(
        &self,
        x: &[f64],
        level: NoiseLevel,
        condition: Option<&str>,
    ) -> Result<DenoiseOutput, WorldError>;
}

/// The exact analytic teacher of a mixture world.
#[derive(Debug, Clone)]
pub struct ExactTeacher {
    world: Arc<MixtureWorld>,
    tag: DenoiserTag,
}

impl ExactTeacher {
    pub fn new(world: Arc<MixtureWorld>) -> Self {
        Self { world, tag: DenoiserTag::TeacherExact }
    }

    fn with_tag(world: Arc<MixtureWorld>, tag: DenoiserTag) -> Self {
        Self { world, tag }
    }

    pub fn world(&self) -> &MixtureWorld {
        &self.world
    }
}

impl Denoiser for ExactTeacher {
    fn dim(&self) -> usize {
        self.world.dim()
    }

    fn tag(&self) -> DenoiserTag {
        self.tag
    }

    fn evaluate(
        &self,
        x: &[f64],
        level: NoiseLevel,
        condition: Option<&str>,
    ) -> Result<DenoiseOutput, WorldError> {
        teacher_denoise(&self.world, level, x, condition)
    }
}

/// Recipe for a degraded student denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StudentSpec {
    /// Teacher of a world whose component means are all shifted by `delta`.
    BiasedMean { delta: Vec<f64> },
    /// Teacher of a world with multiplicatively perturbed weights.
    BiasedWeights { perturbation: Vec<f64> },
    /// Predicts the flow endpoint by a coarse inner integration of the
    /// teacher's denoising flow.
    ConsistencyEndpoint { n_inner: usize },
}

/// Build a student denoiser over `world` per the spec.
pub fn make_student(
    spec: &StudentSpec,
    world: &Arc<MixtureWorld>,
    schedule: &NoiseSchedule,
) -> Result<Arc<dyn Denoiser>, WorldError> {
    match spec {
        StudentSpec::BiasedMean { delta } => {
            let shifted = Arc::new(world.shifted(delta)?);
            Ok(Arc::new(ExactTeacher::with_tag(shifted, DenoiserTag::StudentBiased)))
        }
        StudentSpec::BiasedWeights { perturbation } => {
            let reweighted = Arc::new(world.reweighted(perturbation)?);
            Ok(Arc::new(ExactTeacher::with_tag(reweighted, DenoiserTag::StudentBiased)))
        }
        StudentSpec::ConsistencyEndpoint { n_inner } => {
            if *n_inner < 8 {
                return Err(WorldError::InvalidStudent(format!(
                    "consistency endpoint needs n_inner >= 8, got {n_inner}"
                )));
            }
            Ok(Arc::new(ConsistencyStudent {
                world: Arc::clone(world),
                n_inner: *n_inner,
                sigma_floor: schedule.sigma(1),
            }))
        }
    }
}

/// A student that maps `(x, t)` straight to a flow-endpoint estimate by
/// integrating the teacher's denoising flow on a coarse inner ladder.
#[derive(Debug, Clone)]
pub struct ConsistencyStudent {
    world: Arc<MixtureWorld>,
    n_inner: usize,
    sigma_floor: f64,
}

/// The inner integration ladder: `n_inner` log-uniform sigmas from
/// `sigma_start` down to `sigma_floor`, then the clean endpoint.
pub fn endpoint_ladder(sigma_start: f64, n_inner: usize, sigma_floor: f64) -> Vec<f64> {
    if sigma_start <= sigma_floor {
        return vec![sigma_start, 0.0];
    }
    let lo = sigma_floor.ln();
    let hi = sigma_start.ln();
    let mut ladder: Vec<f64> = (0..n_inner)
        .map(|j| (hi + (lo - hi) * j as f64 / (n_inner - 1) as f64).exp())
        .collect();
    ladder.push(0.0);
    ladder
}

impl ConsistencyStudent {
    fn endpoint(&self, x: &[f64], level: NoiseLevel, condition: Option<&str>) -> Result<Vec<f64>, WorldError> {
        let ladder = endpoint_ladder(level.sigma, self.n_inner, self.sigma_floor);
        let mut cur = x.to_vec();
        for pair in ladder.windows(2) {
            let lvl_c = NoiseLevel::from_sigma(pair[0]);
            let lvl_n = NoiseLevel::from_sigma(pair[1]);
            let out = teacher_denoise(&self.world, lvl_c, &cur, condition)?;
            // One contraction of the denoising flow between the two levels.
            let a = lvl_n.alpha_bar.sqrt();
            let b = (1.0 - lvl_n.alpha_bar).sqrt();
            for k in 0..cur.len() {
                cur[k] = a * out.x0[k] + b * out.eps[k];
            }
        }
        Ok(cur)
    }
}

impl Denoiser for ConsistencyStudent {
    fn dim(&self) -> usize {
        self.world.dim()
    }

    fn tag(&self) -> DenoiserTag {
        DenoiserTag::StudentConsistency
    }

    fn evaluate(
        &self,
        x: &[f64],
        level: NoiseLevel,
        condition: Option<&str>,
    ) -> Result<DenoiseOutput, WorldError> {
        if x.len() != self.world.dim() {
            return Err(WorldError::DimensionMismatch { expected: self.world.dim(), got: x.len() });
        }
        let x0 = self.endpoint(x, level, condition)?;
        Ok(DenoiseOutput::from_x0(x, level, x0))
    }
}

/// Classifier-free guidance parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfgParams {
    pub w: f64,
}

impl CfgParams {
    pub fn new(w: f64) -> Result<Self, WorldError> {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(WorldError::InvalidCfgScale(w));
        }
        Ok(Self { w })
    }
}

impl Default for CfgParams {
    fn default() -> Self {
        Self { w: 7.5 }
    }
}

/// `uncond + w * (cond - uncond)`.
pub fn cfg_combine(cond_eps: &[f64], uncond_eps: &[f64], params: CfgParams) -> Result<Vec<f64>, WorldError> {
    if cond_eps.len() != uncond_eps.len() {
        return Err(WorldError::DimensionMismatch {
            expected: cond_eps.len(),
            got: uncond_eps.len(),
        });
    }
    if params.w == 1.0 {
        return Ok(cond_eps.to_vec());
    }
    Ok(cond_eps
        .iter()
        .zip(uncond_eps)
        .map(|(c, u)| u + params.w * (c - u))
        .collect())
}

/// Tweedie estimate from a combined epsilon prediction at the state `x`.
pub fn cfg_tweedie(x: &[f64], level: NoiseLevel, combined_eps: &[f64]) -> Vec<f64> {
    if level.alpha_bar == 1.0 {
        return x.to_vec();
    }
    tweedie_from_eps(x, level, combined_eps)
}

/// Exact counters for model usage.
///
/// A *round* is one guided query of the model identity at a state and level
/// (a conditional/unconditional pair counts once); *evals* counts raw
/// denoiser invocations.
#[derive(Debug, Default)]
pub struct EvalCounter {
    rounds: AtomicU64,
    evals: AtomicU64,
}

impl EvalCounter {
    pub fn rounds(&self) -> u64 {
        self.rounds.load(Ordering::Relaxed)
    }

    pub fn evals(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.rounds.store(0, Ordering::Relaxed);
        self.evals.store(0, Ordering::Relaxed);
    }
}

/// A denoiser plus its usage counter, as handed to samplers.
#[derive(Clone)]
pub struct ModelHandle {
    model: Arc<dyn Denoiser>,
    counter: Arc<EvalCounter>,
}

/// Everything one CFG round produces.
#[derive(Debug, Clone)]
pub struct CfgOutputs {
    pub eps_cond: Vec<f64>,
    pub eps_uncond: Vec<f64>,
    pub eps_combined: Vec<f64>,
    pub x0_combined: Vec<f64>,
    pub x0_uncond: Vec<f64>,
}

impl ModelHandle {
    pub fn new(model: Arc<dyn Denoiser>) -> Self {
        Self { model, counter: Arc::new(EvalCounter::default()) }
    }

    pub fn model(&self) -> &Arc<dyn Denoiser> {
        &self.model
    }

    pub fn counter(&self) -> &Arc<EvalCounter> {
        &self.counter
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// One guided round: conditional and unconditional predictions combined
    /// at scale `w`, with Tweedie estimates for both the combined and the
    /// unconditional branch. Without a condition the pair collapses to a
    /// single evaluation.
    pub fn eval_cfg(
        &self,
        x: &[f64],
        level: NoiseLevel,
        condition: Option<&str>,
        params: CfgParams,
    ) -> Result<CfgOutputs, WorldError> {
        self.counter.rounds.fetch_add(1, Ordering::Relaxed);
        let uncond = {
            self.counter.evals.fetch_add(1, Ordering::Relaxed);
            self.model.evaluate(x, level, None)?
        };
        let cond = match condition {
            Some(label) => {
                self.counter.evals.fetch_add(1, Ordering::Relaxed);
                self.model.evaluate(x, level, Some(label))?
            }
            None => uncond.clone(),
        };
        let eps_combined = cfg_combine(&cond.eps, &uncond.eps, params)?;
        let x0_combined = cfg_tweedie(x, level, &eps_combined);
        Ok(CfgOutputs {
            eps_cond: cond.eps,
            eps_uncond: uncond.eps,
            eps_combined,
            x0_combined,
            x0_uncond: uncond.x0,
        })
    }
}
