//! A solver laboratory for teacher-guided diffusion sampling on analytic
//! Gaussian-mixture worlds.
//!
//! Everything here runs at desk scale with no pretrained networks: the data
//! distribution is a Gaussian mixture whose score and posterior mean are
//! available in closed form, so the exact teacher denoiser, degraded student
//! denoisers, every sampling iterate, and the teacher-guided refinement of
//! student estimates can all be checked against independent oracles.
//!
//! Module map:
//!
//! - [`schedule`] — discrete noise schedules, timestep grids, and the
//!   variance-exploding view used by the DPM-style solvers
//! - [`world`] — mixture worlds, the exact teacher, degraded students, and
//!   classifier-free guidance plumbing
//! - [`rng`] — seeded, stream-addressable randomness for reproducible runs
//! - [`solvers`] — DDIM, Euler, Euler Ancestral, DPM-Solver++ 2S/2M and
//!   their ancestral variants, plus the trajectory sampler
//! - [`guidance`] — the distillation loss, renoising strategies, estimate
//!   revision, and the guided sampling driver
//! - [`metrics`] — sliced Wasserstein, MMD, and trajectory error measures
//! - [`harness`] — experiment configs, the batch runner, and exports

pub mod guidance;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod schedule;
pub mod solvers;
pub mod world;

pub use guidance::{GuidanceConfig, GuidanceMode, RenoiseSchedule};
pub use rng::RngStream;
pub use schedule::{NoiseLevel, NoiseSchedule, ScheduleKind, SpacingKind, TimeGrid, VeView};
pub use solvers::{sample, SolverKind, SolverOptions, Trajectory};
pub use world::{CfgParams, Denoiser, DenoiserTag, MixtureWorld, StudentSpec};
