//! Closed-form transitions of the conditional Ornstein–Uhlenbeck process
//! `dx = θₜ(μ − x)dt + σₜdw` and of its discrete reverse chain.

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::rng::{self, Rng};

use super::SdeSchedule;

fn check_time(sched: &SdeSchedule, t: usize, lo: usize) -> Result<()> {
    if t < lo || t > sched.steps() {
        return Err(Error::StepRange { step: t, lo, hi: sched.steps() });
    }
    Ok(())
}

/// Weights of the optimal reverse mean
/// `x*ₜ₋₁ = state·(xₜ − μ) + initial·(x₀ − μ) + μ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseCoefficients {
    pub state: f64,
    pub initial: f64,
}

impl SdeSchedule {
    pub fn reverse_coefficients(&self, t: usize) -> Result<ReverseCoefficients> {
        check_time(self, t, 1)?;
        let denom = -(-2.0 * self.theta_bar(t)).exp_m1();
        let prev = -(-2.0 * self.theta_bar(t - 1)).exp_m1();
        let step = -(-2.0 * self.theta_prime(t)).exp_m1();
        Ok(ReverseCoefficients {
            state: prev / denom * (-self.theta_prime(t)).exp(),
            initial: step / denom * (-self.theta_bar(t - 1)).exp(),
        })
    }
}

/// Mean `mₜ = μ + (x₀ − μ)e^{−θ̄ₜ}` and variance `vₜ` of `xₜ | x₀`.
pub fn forward_marginal(
    x0: &ImageGrid,
    mu: &ImageGrid,
    sched: &SdeSchedule,
    t: usize,
) -> Result<(ImageGrid, f64)> {
    x0.ensure_same_shape(mu, "forward_marginal")?;
    check_time(sched, t, 0)?;
    if t == 0 {
        return Ok((x0.clone(), 0.0));
    }
    let decay = (-sched.theta_bar(t)).exp();
    let mean = x0.zip_map(mu, |x, m| m + (x - m) * decay)?;
    Ok((mean, sched.variance(t)))
}

/// Exact draw from `N(mₜ, vₜ·I)`; also returns the standard-normal field used.
pub fn sample_forward_with_rng(
    x0: &ImageGrid,
    mu: &ImageGrid,
    sched: &SdeSchedule,
    t: usize,
    rng: &mut Rng,
) -> Result<(ImageGrid, ImageGrid)> {
    let (mean, var) = forward_marginal(x0, mu, sched, t)?;
    let noise = rng::normal_like(&mean, rng);
    let sd = var.sqrt();
    let xt = mean.zip_map(&noise, |m, z| m + sd * z)?;
    Ok((xt, noise))
}

pub fn sample_forward(
    x0: &ImageGrid,
    mu: &ImageGrid,
    sched: &SdeSchedule,
    t: usize,
    rng_seed: u64,
) -> Result<ImageGrid> {
    let mut rng = rng::seeded(rng_seed);
    sample_forward_with_rng(x0, mu, sched, t, &mut rng).map(|(x, _)| x)
}

/// Minimizer of `−log q(xₜ₋₁ | xₜ, x₀)`.
pub fn optimal_reverse_step(
    x_t: &ImageGrid,
    x0: &ImageGrid,
    mu: &ImageGrid,
    sched: &SdeSchedule,
    t: usize,
) -> Result<ImageGrid> {
    x_t.ensure_same_shape(mu, "optimal_reverse_step")?;
    x0.ensure_same_shape(mu, "optimal_reverse_step")?;
    let c = sched.reverse_coefficients(t)?;
    let data = x_t
        .data()
        .iter()
        .zip(x0.data())
        .zip(mu.data())
        .map(|((&xt, &x0), &m)| c.state * (xt - m) + c.initial * (x0 - m) + m)
        .collect();
    ImageGrid::new(x_t.height(), x_t.width(), x_t.channels(), data)
}

/// Inverts `xₜ = mₜ + √vₜ·ε` for `x₀` given a noise estimate.
pub fn estimate_x0(
    x_t: &ImageGrid,
    mu: &ImageGrid,
    sched: &SdeSchedule,
    t: usize,
    predicted_noise: &ImageGrid,
) -> Result<ImageGrid> {
    x_t.ensure_same_shape(mu, "estimate_x0")?;
    x_t.ensure_same_shape(predicted_noise, "estimate_x0")?;
    check_time(sched, t, 1)?;
    let grow = sched.theta_bar(t).exp();
    let sd = sched.variance(t).sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(mu.data())
        .zip(predicted_noise.data())
        .map(|((&xt, &m), &e)| grow * (xt - m - sd * e) + m)
        .collect();
    ImageGrid::new(x_t.height(), x_t.width(), x_t.channels(), data)
}

/// Variance of the reverse posterior, `β̃ₜ·κ²`.
pub fn posterior_variance(sched: &SdeSchedule, t: usize) -> Result<f64> {
    check_time(sched, t, 1)?;
    Ok(sched.beta_tilde(t) * sched.kappa2())
}

pub fn posterior_step_with_rng(
    x_t: &ImageGrid,
    x0_hat: &ImageGrid,
    mu: &ImageGrid,
    sched: &SdeSchedule,
    t: usize,
    rng: &mut Rng,
) -> Result<ImageGrid> {
    let mut mean = optimal_reverse_step(x_t, x0_hat, mu, sched, t)?;
    let sd = posterior_variance(sched, t)?.sqrt();
    if sd > 0.0 {
        for v in mean.data_mut() {
            *v += sd * rng::standard_normal(rng);
        }
    }
    Ok(mean)
}

/// Draw from `N(x*ₜ₋₁, β̃ₜκ²·I)` with `x*ₜ₋₁` built from the estimate `x̂₀`.
pub fn posterior_step(
    x_t: &ImageGrid,
    x0_hat: &ImageGrid,
    mu: &ImageGrid,
    sched: &SdeSchedule,
    t: usize,
    rng_seed: u64,
) -> Result<ImageGrid> {
    let mut rng = rng::seeded(rng_seed);
    posterior_step_with_rng(x_t, x0_hat, mu, sched, t, &mut rng)
}
