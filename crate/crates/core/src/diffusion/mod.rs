//! Variance-preserving forward process, noise schedules and DDPM/DDIM samplers.

mod process;
mod sampler;
mod schedule;

pub use process::{ddim_step, ddpm_step, predict_x0, q_sample};
pub use sampler::{sample, timestep_grid, Denoiser, SampleConfig, SampleOutput, Sampler};
pub use schedule::{NoiseSchedule, ScheduleKind};
