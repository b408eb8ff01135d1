//! Mean-reverting (conditional Ornstein–Uhlenbeck) diffusion.
//!
//! The forward process `dx = θₜ(μ − x)dt + σₜdw` with `σₜ²/θₜ = 2κ²` has the
//! closed-form marginal `xₜ | x₀ ~ N(μ + (x₀ − μ)e^{−θ̄ₜ}, κ²(1 − e^{−2θ̄ₜ}))`,
//! so training draws and reverse posteriors never need an SDE integrator.

mod process;
mod sampler;
mod schedule;

pub use process::{
    estimate_x0, forward_marginal, optimal_reverse_step, posterior_step, posterior_step_with_rng,
    posterior_variance, sample_forward, sample_forward_with_rng, ReverseCoefficients,
};
pub use sampler::{
    reverse_sample, reverse_sample_batch, AnalyticNoise, NoisePredictor, SampleOptions, SampleOutput,
};
pub use schedule::{build_schedule, ScheduleConfig, SdeSchedule, ThetaProfile};
