//! Batch sampling orchestration: variants, references, metrics, and the
//! study drivers behind each CLI verb.
//!
//! Determinism contract: every trajectory owns RNG streams derived from
//! `(seed, trajectory index)` alone, trajectories are merged in index
//! order, and metric streams are fixed, so outputs are byte-identical
//! across runs and worker counts. Compared variants share trajectory
//! streams (common random numbers): the same initial draws and, where the
//! guidance schedule allows, the same renoising draws.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::guidance::{run_distillation_pp, GuidanceConfig, GuidanceError, RenoiseSchedule};
use crate::metrics::{
    metric_report, sliced_wasserstein, MetricError, MetricReport, SampleSet,
};
use crate::rng::{RngStream, LANE_CALIBRATION, LANE_REFERENCE, STREAM_PROJECTIONS, STREAM_STRIDE};
use crate::schedule::{build_schedule, NoiseSchedule, ScheduleError, TimeGrid};
use crate::solvers::{sample, SampleSetup, SolverError, SolverKind, SolverOptions, Trajectory};
use crate::world::{
    make_student, CfgParams, Denoiser, ExactTeacher, MixtureWorld, ModelHandle, WorldError,
};

use super::{ConfigError, ExperimentConfig, ResultTable, TableRow};

/// Fine-step reference sampler length.
pub const REFERENCE_STEPS: usize = 1024;

/// Projection count for sliced-Wasserstein reports.
const N_PROJECTIONS: usize = 64;
/// Deterministic per-side cap for the MMD estimate.
const MMD_CAP: usize = 2000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Invalid(String),
}

/// One run variant: a label, an optional guidance config (absent means the
/// plain student baseline), and an optional step-count override.
#[derive(Debug, Clone)]
pub struct VariantSpec {
    pub label: String,
    pub guidance: Option<GuidanceConfig>,
    pub m_steps_override: Option<usize>,
}

impl VariantSpec {
    pub fn baseline(label: impl Into<String>) -> Self {
        Self { label: label.into(), guidance: None, m_steps_override: None }
    }

    pub fn guided(label: impl Into<String>, guidance: GuidanceConfig) -> Self {
        Self { label: label.into(), guidance: Some(guidance), m_steps_override: None }
    }
}

/// Everything measured for one variant.
#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub label: String,
    pub samples: SampleSet,
    pub report: MetricReport,
    pub teacher_rounds: u64,
    pub teacher_evals: u64,
    pub student_rounds: u64,
    pub student_evals: u64,
    pub wall_ms: u128,
}

/// Accumulated outputs of a run; variants append as they finish so a
/// failure still leaves a valid partial table.
#[derive(Debug, Default)]
pub struct ExperimentOutputs {
    pub config_hash: String,
    pub table: ResultTable,
    pub variants: Vec<VariantOutcome>,
    pub reference: Option<SampleSet>,
    pub calibration: Option<SampleSet>,
}

struct Bench {
    schedule: NoiseSchedule,
    teacher: Arc<dyn Denoiser>,
    student: Arc<dyn Denoiser>,
}

fn build_bench(config: &ExperimentConfig) -> Result<Bench, RunError> {
    let world = Arc::new(config.build_world()?);
    let schedule = config.build_schedule()?;
    let teacher: Arc<dyn Denoiser> = Arc::new(ExactTeacher::new(Arc::clone(&world)));
    let student = make_student(&config.student, &world, &schedule)?;
    Ok(Bench { schedule, teacher, student })
}

fn grid_for(config: &ExperimentConfig, schedule: &NoiseSchedule, variant: &VariantSpec) -> Result<TimeGrid, RunError> {
    match variant.m_steps_override {
        Some(m) => Ok(crate::schedule::make_grid(schedule, m, config.grid.spacing)?),
        None => Ok(config.build_grid(schedule)?),
    }
}

/// Generate the final samples of one variant, in trajectory-index order.
/// Returns the sample set and the exact model-call counts.
pub fn generate_samples(
    config: &ExperimentConfig,
    variant: &VariantSpec,
) -> Result<(SampleSet, VariantCounts), RunError> {
    let bench = build_bench(config)?;
    let grid = grid_for(config, &bench.schedule, variant)?;
    let student = ModelHandle::new(Arc::clone(&bench.student));
    let teacher = ModelHandle::new(Arc::clone(&bench.teacher));
    let setup = SampleSetup {
        model: &student,
        solver: config.solver.kind,
        opts: config.solver.options,
        grid: &grid,
        schedule: &bench.schedule,
        cfg: CfgParams { w: config.cfg.w },
        condition: config.cfg.condition.as_deref(),
    };
    let n = config.n_samples as usize;
    let rows: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>, RunError> {
            let mut solver_rng = RngStream::for_trajectory(config.seed, j);
            let traj = match &variant.guidance {
                Some(g) => {
                    let mut guidance_rng = RngStream::for_guidance(config.seed, j);
                    run_distillation_pp(&setup, &teacher, g, None, &mut solver_rng, &mut guidance_rng)?
                }
                None => sample(&setup, None, &mut solver_rng)?,
            };
            Ok(traj.final_x)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let provenance = format!("{}:{}:seed={}..{}", config.hash(), variant.label, config.seed, n);
    let samples = SampleSet::from_rows(&rows, provenance)?;
    let counts = VariantCounts {
        teacher_rounds: teacher.counter().rounds(),
        teacher_evals: teacher.counter().evals(),
        student_rounds: student.counter().rounds(),
        student_evals: student.counter().evals(),
    };
    Ok((samples, counts))
}

/// Exact model-call counts of one variant run.
#[derive(Debug, Clone, Copy)]
pub struct VariantCounts {
    pub teacher_rounds: u64,
    pub teacher_evals: u64,
    pub student_rounds: u64,
    pub student_evals: u64,
}

/// Replay a handful of trajectories of a variant for the trajectory
/// artifact.
pub fn sample_trajectories(
    config: &ExperimentConfig,
    variant: &VariantSpec,
    indices: &[u64],
) -> Result<Vec<Trajectory>, RunError> {
    let bench = build_bench(config)?;
    let grid = grid_for(config, &bench.schedule, variant)?;
    let student = ModelHandle::new(Arc::clone(&bench.student));
    let teacher = ModelHandle::new(Arc::clone(&bench.teacher));
    let setup = SampleSetup {
        model: &student,
        solver: config.solver.kind,
        opts: config.solver.options,
        grid: &grid,
        schedule: &bench.schedule,
        cfg: CfgParams { w: config.cfg.w },
        condition: config.cfg.condition.as_deref(),
    };
    indices
        .iter()
        .map(|&j| {
            let mut solver_rng = RngStream::for_trajectory(config.seed, j);
            let traj = match &variant.guidance {
                Some(g) => {
                    let mut guidance_rng = RngStream::for_guidance(config.seed, j);
                    run_distillation_pp(&setup, &teacher, g, None, &mut solver_rng, &mut guidance_rng)?
                }
                None => sample(&setup, None, &mut solver_rng)?,
            };
            Ok(traj)
        })
        .collect()
}

/// Fine-step teacher reference samples (the distribution the variants are
/// measured against), from a dedicated stream lane.
pub fn reference_samples(config: &ExperimentConfig) -> Result<(SampleSet, VariantCounts), RunError> {
    let bench = build_bench(config)?;
    let grid = crate::schedule::make_grid(&bench.schedule, REFERENCE_STEPS.min(bench.schedule.n_train()), crate::schedule::SpacingKind::Uniform)?;
    let teacher = ModelHandle::new(Arc::clone(&bench.teacher));
    let setup = SampleSetup {
        model: &teacher,
        solver: SolverKind::Ddim,
        opts: SolverOptions::default(),
        grid: &grid,
        schedule: &bench.schedule,
        cfg: CfgParams { w: config.cfg.w },
        condition: config.cfg.condition.as_deref(),
    };
    let n = config.n_samples as usize;
    let rows: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>, RunError> {
            let mut rng = RngStream::new(config.seed, STREAM_STRIDE * j + LANE_REFERENCE);
            Ok(sample(&setup, None, &mut rng)?.final_x)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let provenance = format!("{}:reference:seed={}..{}", config.hash(), config.seed, n);
    let samples = SampleSet::from_rows(&rows, provenance)?;
    let counts = VariantCounts {
        teacher_rounds: teacher.counter().rounds(),
        teacher_evals: teacher.counter().evals(),
        student_rounds: 0,
        student_evals: 0,
    };
    Ok((samples, counts))
}

/// Direct draws from the analytic mixture, for calibration.
pub fn generate_analytic_samples(config: &ExperimentConfig, n: usize) -> Result<SampleSet, RunError> {
    let world = Arc::new(config.build_world()?);
    let selected: Vec<usize> = match config.cfg.condition.as_deref() {
        None => (0..world.components().len()).collect(),
        Some(label) => world
            .components()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.condition == label)
            .map(|(i, _)| i)
            .collect(),
    };
    if selected.is_empty() {
        return Err(RunError::Invalid("condition matches no components".into()));
    }
    let total: f64 = selected.iter().map(|&i| world.components()[i].weight).sum();
    let rows: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = RngStream::new(config.seed, STREAM_STRIDE * j + LANE_CALIBRATION);
            let u = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = selected[selected.len() - 1];
            for &i in &selected {
                acc += world.components()[i].weight;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let c = &world.components()[pick];
            let z = rng.normal_vec(world.dim());
            (0..world.dim()).map(|k| c.mean[k] + c.var[k].sqrt() * z[k]).collect()
        })
        .collect();
    let provenance = format!("{}:analytic:seed={}..{}", config.hash(), config.seed, n);
    Ok(SampleSet::from_rows(&rows, provenance)?)
}

fn push_report_rows(
    table: &mut ResultTable,
    config_hash: &str,
    label: &str,
    report: &MetricReport,
    counts: &VariantCounts,
    w2_gaussian: Option<f64>,
) {
    let mut push = |metric: &str, value: f64| {
        table.push(TableRow {
            config_hash: config_hash.to_string(),
            variant: label.to_string(),
            metric: metric.to_string(),
            value,
            teacher_calls: counts.teacher_rounds,
            student_calls: counts.student_rounds,
        });
    };
    push("sliced_wasserstein", report.sliced_wasserstein);
    push("mmd_rbf", report.mmd_rbf);
    let mean_norm = report.mean_error.iter().map(|v| v * v).sum::<f64>().sqrt();
    push("mean_error_norm", mean_norm);
    push("cov_frobenius_error", report.cov_frobenius_error);
    if let Some(w2) = w2_gaussian {
        push("w2_gaussian", w2);
    }
}

fn measure_variant(
    config: &ExperimentConfig,
    variant: &VariantSpec,
    reference: &SampleSet,
    outputs: &mut ExperimentOutputs,
) -> Result<(), RunError> {
    let started = Instant::now();
    let (samples, counts) = generate_samples(config, variant)?;
    let mut proj_rng = RngStream::new(config.seed, STREAM_PROJECTIONS);
    let mut report = metric_report(reference, &samples, N_PROJECTIONS, MMD_CAP, &mut proj_rng)?;
    let world = config.build_world()?;
    let w2 = if world.components().len() == 1 {
        let c = &world.components()[0];
        let mean = samples.mean();
        let cov = samples.covariance();
        let d = samples.dim();
        let var_diag: Vec<f64> = (0..d).map(|k| cov[k * d + k]).collect();
        Some(crate::metrics::gaussian_w2(&mean, &var_diag, &c.mean, &c.var)?)
    } else {
        None
    };
    report.w2_gaussian = w2;
    let wall_ms = started.elapsed().as_millis();
    push_report_rows(&mut outputs.table, &outputs.config_hash, &variant.label, &report, &counts, w2);
    outputs.table.wall_times_ms.push((variant.label.clone(), wall_ms));
    outputs.variants.push(VariantOutcome {
        label: variant.label.clone(),
        samples,
        report,
        teacher_rounds: counts.teacher_rounds,
        teacher_evals: counts.teacher_evals,
        student_rounds: counts.student_rounds,
        student_evals: counts.student_evals,
        wall_ms,
    });
    Ok(())
}

fn prepare_reference(config: &ExperimentConfig, outputs: &mut ExperimentOutputs) -> Result<SampleSet, RunError> {
    let started = Instant::now();
    let (reference, ref_counts) = reference_samples(config)?;
    let calibration = generate_analytic_samples(config, config.n_samples as usize)?;
    // Pre-registered estimator noise floor: the reference set against fresh
    // analytic draws.
    let mut proj_rng = RngStream::new(config.seed, STREAM_PROJECTIONS);
    let floor = sliced_wasserstein(&reference, &calibration, N_PROJECTIONS, &mut proj_rng)?;
    outputs.table.push(TableRow {
        config_hash: outputs.config_hash.clone(),
        variant: "reference".into(),
        metric: "sliced_wasserstein_vs_analytic".into(),
        value: floor,
        teacher_calls: ref_counts.teacher_rounds,
        student_calls: 0,
    });
    outputs.table.wall_times_ms.push(("reference".into(), started.elapsed().as_millis()));
    outputs.reference = Some(reference.clone());
    outputs.calibration = Some(calibration);
    Ok(reference)
}

/// Run the configured experiment: a `baseline` student variant, plus a
/// `guided` variant when guidance is active, measured against the
/// fine-step teacher reference.
pub fn run_experiment(config: &ExperimentConfig, outputs: &mut ExperimentOutputs) -> Result<(), RunError> {
    config.validate()?;
    outputs.config_hash = config.hash();
    let reference = prepare_reference(config, outputs)?;
    measure_variant(config, &VariantSpec::baseline("baseline"), &reference, outputs)?;
    if config.guidance.is_active() {
        measure_variant(
            config,
            &VariantSpec::guided("guided", config.guidance),
            &reference,
            outputs,
        )?;
    }
    Ok(())
}

/// Renoising-schedule ablation: baseline plus the three schedules, under
/// common random numbers.
pub fn run_ablation_renoise(config: &ExperimentConfig, outputs: &mut ExperimentOutputs) -> Result<(), RunError> {
    config.validate()?;
    if !config.guidance.is_active() {
        return Err(RunError::Invalid("renoise ablation requires active guidance (lambda > 0, k > 0)".into()));
    }
    outputs.config_hash = config.hash();
    let reference = prepare_reference(config, outputs)?;
    measure_variant(config, &VariantSpec::baseline("baseline"), &reference, outputs)?;
    for (label, renoise) in [
        ("random", RenoiseSchedule::Random),
        ("same", RenoiseSchedule::Same),
        ("decreasing", RenoiseSchedule::Decreasing),
    ] {
        let guidance = GuidanceConfig { renoise, ..config.guidance };
        measure_variant(config, &VariantSpec::guided(label, guidance), &reference, outputs)?;
    }
    Ok(())
}

/// Guidance-scale sweep: baseline plus one guided variant per lambda, with
/// batch confidence intervals on the sliced-Wasserstein values.
pub fn sweep_lambda(
    config: &ExperimentConfig,
    lambdas: &[f64],
    outputs: &mut ExperimentOutputs,
) -> Result<(), RunError> {
    config.validate()?;
    outputs.config_hash = config.hash();
    let reference = prepare_reference(config, outputs)?;
    measure_variant(config, &VariantSpec::baseline("lambda=0"), &reference, outputs)?;
    push_sw_interval(config, &reference, "lambda=0", outputs)?;
    for &lambda in lambdas {
        if lambda == 0.0 {
            continue;
        }
        let label = format!("lambda={lambda}");
        let guidance = GuidanceConfig { lambda, ..config.guidance };
        measure_variant(config, &VariantSpec::guided(label.clone(), guidance), &reference, outputs)?;
        push_sw_interval(config, &reference, &label, outputs)?;
    }
    Ok(())
}

/// Batched normal-approximation interval for the sliced-Wasserstein value
/// of an already-measured variant.
fn push_sw_interval(
    config: &ExperimentConfig,
    reference: &SampleSet,
    label: &str,
    outputs: &mut ExperimentOutputs,
) -> Result<(), RunError> {
    let outcome = outputs
        .variants
        .iter()
        .find(|v| v.label == label)
        .ok_or_else(|| RunError::Invalid(format!("variant {label} not measured")))?;
    let samples = outcome.samples.clone();
    let batches = 10usize.min(samples.len() / 2).max(2);
    let per = samples.len() / batches;
    let mut values = Vec::with_capacity(batches);
    for b in 0..batches {
        let rows: Vec<Vec<f64>> = (b * per..(b + 1) * per).map(|i| samples.row(i).to_vec()).collect();
        let batch = SampleSet::from_rows(&rows, format!("{label}:batch{b}"))?;
        let mut proj_rng = RngStream::new(config.seed, STREAM_PROJECTIONS);
        values.push(sliced_wasserstein(reference, &batch, N_PROJECTIONS, &mut proj_rng)?);
    }
    let mean = values.iter().sum::<f64>() / batches as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (batches as f64 - 1.0);
    let half = 1.96 * (var / batches as f64).sqrt();
    let counts = VariantCounts {
        teacher_rounds: outcome.teacher_rounds,
        teacher_evals: outcome.teacher_evals,
        student_rounds: outcome.student_rounds,
        student_evals: outcome.student_evals,
    };
    for (metric, value) in [
        ("sliced_wasserstein_ci_low", mean - half),
        ("sliced_wasserstein_ci_high", mean + half),
    ] {
        outputs.table.push(TableRow {
            config_hash: outputs.config_hash.clone(),
            variant: label.to_string(),
            metric: metric.to_string(),
            value,
            teacher_calls: counts.teacher_rounds,
            student_calls: counts.student_rounds,
        });
    }
    Ok(())
}

/// Step-count comparison: an `m+1` guided run (m student steps plus one
/// teacher round) against `m+1`-step and `m+2`-step baselines, mirroring a
/// wall-time-parity comparison by call counts.
pub fn compare_steps(config: &ExperimentConfig, outputs: &mut ExperimentOutputs) -> Result<(), RunError> {
    config.validate()?;
    outputs.config_hash = config.hash();
    let reference = prepare_reference(config, outputs)?;
    let m = config.grid.m_steps;
    let guidance = GuidanceConfig { k: 1, ..config.guidance };
    let plus_one = VariantSpec {
        label: format!("{m}+1"),
        guidance: Some(guidance),
        m_steps_override: None,
    };
    measure_variant(config, &plus_one, &reference, outputs)?;
    let baseline_next = VariantSpec {
        label: format!("{} step", m + 1),
        guidance: None,
        m_steps_override: Some(m + 1),
    };
    measure_variant(config, &baseline_next, &reference, outputs)?;
    let guided_next = VariantSpec {
        label: format!("{}+1", m + 1),
        guidance: Some(guidance),
        m_steps_override: Some(m + 1),
    };
    measure_variant(config, &guided_next, &reference, outputs)?;
    let baseline_next2 = VariantSpec {
        label: format!("{} step", m + 2),
        guidance: None,
        m_steps_override: Some(m + 2),
    };
    measure_variant(config, &baseline_next2, &reference, outputs)?;
    Ok(())
}

/// Schedule used by the solver convergence study: fine enough that a
/// 4096-step reference grid has distinct integer indices.
pub fn convergence_schedule() -> NoiseSchedule {
    build_schedule(crate::schedule::ScheduleKind::Linear, 8192, 1e-5, 2.45e-3).expect("valid")
}

/// Grid of `m` points from the noisy end down to a shared positive floor
/// index, then the clean endpoint. Sharing the floor across step counts
/// makes the terminal leap identical for every run, so endpoint errors
/// reflect solver order alone. Points are uniform in log-sigma (snapped to
/// integer indices), the spacing the second-order solvers are built for;
/// `uniform_index` instead spaces them uniformly in the index.
pub fn convergence_grid(
    schedule: &NoiseSchedule,
    m: usize,
    sigma_max: f64,
    sigma_floor: f64,
    uniform_index: bool,
) -> Result<TimeGrid, ScheduleError> {
    let top = index_of_sigma(schedule, sigma_max);
    let floor = index_of_sigma(schedule, sigma_floor);
    let steps: Vec<usize> = if uniform_index {
        (0..m)
            .map(|j| {
                let f = j as f64 / (m - 1) as f64;
                (top as f64 + f * (floor as f64 - top as f64)).round() as usize
            })
            .collect()
    } else {
        let log_hi = schedule.sigma(top).ln();
        let log_lo = schedule.sigma(floor).ln();
        (0..m)
            .map(|j| {
                let target = (log_hi + (log_lo - log_hi) * j as f64 / (m - 1) as f64).exp();
                index_of_sigma(schedule, target)
            })
            .collect()
    };
    let mut steps = steps;
    steps.push(0);
    TimeGrid::from_steps(schedule, steps)
}

/// Integer index whose sigma is closest to `target` in log space.
fn index_of_sigma(schedule: &NoiseSchedule, target: f64) -> usize {
    let (mut lo, mut hi) = (1usize, schedule.n_train());
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if schedule.sigma(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dl = (schedule.sigma(lo).ln() - target.ln()).abs();
    let dh = (schedule.sigma(hi).ln() - target.ln()).abs();
    if dl <= dh {
        lo
    } else {
        hi
    }
}

/// Sigma span of the convergence study: wide enough to cross the
/// structurally interesting part of the flow, narrow enough that the
/// coarsest grids are already in the asymptotic regime.
const CONVERGENCE_SIGMA_MAX: f64 = 10.0;
const CONVERGENCE_SIGMA_FLOOR: f64 = 0.05;

/// Endpoint-error study over step counts, against a 4096-step reference
/// from the same initial states. Emits rows `variant = "<solver>:<M>"`,
/// `metric = "endpoint_error"`.
pub fn run_convergence_study(
    world: &Arc<MixtureWorld>,
    seed: u64,
    step_counts: &[usize],
    n_probes: usize,
    outputs: &mut ExperimentOutputs,
) -> Result<(), RunError> {
    let schedule = convergence_schedule();
    let teacher = ModelHandle::new(Arc::new(ExactTeacher::new(Arc::clone(world))));
    let inits: Vec<Vec<f64>> = (0..n_probes as u64)
        .map(|j| RngStream::for_trajectory(seed, j).normal_vec(world.dim()))
        .collect();
    // The densest distinct-integer grid is index-uniform; pairing it with
    // the second-order iterate puts the reference error far below every
    // measured solver error.
    let ref_grid =
        convergence_grid(&schedule, 4096, CONVERGENCE_SIGMA_MAX, CONVERGENCE_SIGMA_FLOOR, true)?;
    let ref_setup = SampleSetup {
        model: &teacher,
        solver: SolverKind::Dpmpp2s,
        opts: SolverOptions::default(),
        grid: &ref_grid,
        schedule: &schedule,
        cfg: CfgParams { w: 1.0 },
        condition: None,
    };
    let references: Vec<Vec<f64>> = inits
        .par_iter()
        .map(|init| -> Result<Vec<f64>, RunError> {
            let mut rng = RngStream::new(seed, 0);
            Ok(sample(&ref_setup, Some(init), &mut rng)?.final_x)
        })
        .collect::<Result<Vec<_>, _>>()?;
    for solver in [SolverKind::Ddim, SolverKind::EulerVe, SolverKind::Dpmpp2s, SolverKind::Dpmpp2m] {
        for &m in step_counts {
            let grid =
                convergence_grid(&schedule, m, CONVERGENCE_SIGMA_MAX, CONVERGENCE_SIGMA_FLOOR, false)?;
            let setup = SampleSetup {
                model: &teacher,
                solver,
                opts: SolverOptions::default(),
                grid: &grid,
                schedule: &schedule,
                cfg: CfgParams { w: 1.0 },
                condition: None,
            };
            let errors: Vec<f64> = inits
                .par_iter()
                .zip(&references)
                .map(|(init, reference)| -> Result<f64, RunError> {
                    let mut rng = RngStream::new(seed, 0);
                    let traj = sample(&setup, Some(init), &mut rng)?;
                    Ok(traj
                        .final_x
                        .iter()
                        .zip(reference)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt())
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mean = crate::metrics::pairwise_sum(&errors) / errors.len() as f64;
            let solver_label = match solver {
                SolverKind::Ddim => "ddim",
                SolverKind::EulerVe => "euler-ve",
                SolverKind::Dpmpp2s => "dpmpp-2s",
                SolverKind::Dpmpp2m => "dpmpp-2m",
                _ => unreachable!(),
            };
            outputs.table.push(TableRow {
                config_hash: outputs.config_hash.clone(),
                variant: format!("{solver_label}:{m}"),
                metric: "endpoint_error".into(),
                value: mean,
                teacher_calls: 0,
                student_calls: 0,
            });
        }
    }
    Ok(())
}
