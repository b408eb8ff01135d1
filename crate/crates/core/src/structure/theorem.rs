//! Numerical checks of structural consistency.
//!
//! Part one drives the structure channel with the mean reverse dynamics
//! `ds/dt = −(θₜ + σₜ²/vₜ)(s − s_lq)` and measures how close the terminal
//! state lands to the test-time structure. Each step freezes the rate at the
//! step's right endpoint, so one step multiplies the deviation by
//! `exp(−(θᵢ + σᵢ²/vᵢ))`.
//!
//! Part two evaluates both sides of the expected-error bound from measured
//! generator outputs.

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::ImageGrid;
use crate::rng;
use crate::sde::{ScheduleConfig, SdeSchedule};

/// `exp(−Σᵢ (θᵢ + σᵢ²/vᵢ))`, the factor by which the structural deviation
/// shrinks over a full reverse pass.
pub fn structural_decay_factor(sched: &SdeSchedule) -> f64 {
    (-total_rate(sched)).exp()
}

fn total_rate(sched: &SdeSchedule) -> f64 {
    (1..=sched.steps()).map(|i| step_rate(sched, i)).sum()
}

fn step_rate(sched: &SdeSchedule, i: usize) -> f64 {
    sched.theta(i) + sched.sigma2(i) / sched.variance(i)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TheoremConfig {
    pub steps: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Template for every schedule; its step count is replaced per row.
    pub schedule: ScheduleConfig,
    pub grid_size: usize,
    /// Fraction of pixels set in each random binary structure map.
    pub edge_density: f64,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self {
            steps: vec![2, 10, 50, 100],
            trials: 1000,
            seed: 0,
            schedule: ScheduleConfig::default(),
            grid_size: 16,
            edge_density: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremRow {
    pub steps: usize,
    pub decay_factor: f64,
    /// Mean over trials of `‖s₀ − s_lq‖₂`.
    pub mean_l2_error: f64,
    /// Mean over trials of the per-pixel RMS deviation.
    pub mean_rms_error: f64,
    /// Same dynamics started at `s_lq`; should be exactly zero.
    pub equilibrium_error: f64,
}

/// Measured terms of `E‖C(x̂₀) − s_lq‖ ≤ K·E‖s₀ − s_lq‖ + ε_align`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub samples: usize,
    pub lhs: f64,
    pub mean_structure_error: f64,
    pub lipschitz: f64,
    pub k_hat: f64,
    pub eps_align: f64,
}

impl BoundEstimate {
    pub fn rhs(&self) -> f64 {
        self.k_hat * self.mean_structure_error + self.eps_align
    }

    pub fn holds(&self) -> bool {
        self.k_hat.is_finite() && self.lhs <= self.rhs() * (1.0 + 1e-12) + 1e-12
    }
}

/// One test image's worth of generator outputs.
#[derive(Debug, Clone)]
pub struct BoundSample {
    /// `C(y)`.
    pub s_lq: ImageGrid,
    /// Structure channel of the sample drawn with condition `[y, s_lq]`.
    pub s0: ImageGrid,
    /// `G_s([y, s_lq]) = C(x̂₀)`.
    pub edges_from_lq: ImageGrid,
    /// `G_s([y, s₀])`, drawn with the same seed.
    pub edges_from_s0: ImageGrid,
}

/// `L̂ = max ‖G_s([y,s_lq]) − G_s([y,s₀])‖ / ‖s_lq − s₀‖`, `K̂ = 1 + L̂`,
/// `ε̂_align = E‖G_s([y,s₀]) − s₀‖`.
pub fn estimate_consistency_bound(samples: &[BoundSample]) -> Result<BoundEstimate> {
    if samples.is_empty() {
        return Err(Error::Statistics("bound estimate needs at least one sample".into()));
    }
    let n = samples.len() as f64;
    let (mut lhs, mut dev, mut align, mut lip) = (0.0, 0.0, 0.0, 0.0f64);
    for s in samples {
        lhs += s.edges_from_lq.l2_distance(&s.s_lq)?;
        let d = s.s0.l2_distance(&s.s_lq)?;
        dev += d;
        align += s.edges_from_s0.l2_distance(&s.s0)?;
        let num = s.edges_from_lq.l2_distance(&s.edges_from_s0)?;
        if d > 0.0 {
            lip = lip.max(num / d);
        } else if num > 0.0 {
            lip = f64::INFINITY;
        }
    }
    Ok(BoundEstimate {
        samples: samples.len(),
        lhs: lhs / n,
        mean_structure_error: dev / n,
        lipschitz: lip,
        k_hat: 1.0 + lip,
        eps_align: align / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub trials: usize,
    pub rows: Vec<TheoremRow>,
    pub bound: Option<BoundEstimate>,
}

impl TheoremReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_rms_error < w[0].mean_rms_error)
    }

    pub fn row(&self, steps: usize) -> Option<&TheoremRow> {
        self.rows.iter().find(|r| r.steps == steps)
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "trials: {}", self.trials);
        for r in &self.rows {
            let _ = writeln!(s, "T{}.decay_factor: {:e}", r.steps, r.decay_factor);
            let _ = writeln!(s, "T{}.mean_l2_error: {:e}", r.steps, r.mean_l2_error);
            let _ = writeln!(s, "T{}.mean_rms_error: {:e}", r.steps, r.mean_rms_error);
            let _ = writeln!(s, "T{}.equilibrium_error: {:e}", r.steps, r.equilibrium_error);
        }
        let _ = writeln!(s, "strictly_decreasing: {}", self.strictly_decreasing());
        if let Some(b) = &self.bound {
            let _ = writeln!(s, "bound.samples: {}", b.samples);
            let _ = writeln!(s, "bound.lhs: {:.6}", b.lhs);
            let _ = writeln!(s, "bound.mean_structure_error: {:.6}", b.mean_structure_error);
            let _ = writeln!(s, "bound.lipschitz: {:.6}", b.lipschitz);
            let _ = writeln!(s, "bound.k_hat: {:.6}", b.k_hat);
            let _ = writeln!(s, "bound.eps_align: {:.6}", b.eps_align);
            let _ = writeln!(s, "bound.rhs: {:.6}", b.rhs());
            let _ = writeln!(s, "bound.holds: {}", b.holds());
        }
        s
    }

    /// Error-vs-T table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("T,decay_factor,mean_l2_error,mean_rms_error,equilibrium_error\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e}",
                r.steps, r.decay_factor, r.mean_l2_error, r.mean_rms_error, r.equilibrium_error
            );
        }
        s
    }
}

fn random_structure(n: usize, density: f64, r: &mut rng::Rng) -> ImageGrid {
    ImageGrid::from_fn(n, n, |_, _| if r.random::<f64>() < density { 1.0 } else { 0.0 })
}

/// Runs the mean reverse dynamics from `s_init` towards `s_lq`.
pub fn run_structural_dynamics(s_init: &ImageGrid, s_lq: &ImageGrid, sched: &SdeSchedule) -> Result<ImageGrid> {
    let mut s = s_init.clone();
    for i in (1..=sched.steps()).rev() {
        let k = (-step_rate(sched, i)).exp();
        s = s.zip_map(s_lq, |a, b| b + k * (a - b))?;
    }
    Ok(s)
}

/// Monte-Carlo over random `(s_init, s_lq)` structure pairs, one row per
/// entry of `cfg.steps`. Trial `k` draws its maps from stream `(seed, k)`,
/// so every row sees the same pairs.
pub fn verify_consistency_theorem(cfg: &TheoremConfig) -> Result<TheoremReport> {
    if cfg.trials < 100 {
        return Err(Error::Statistics(format!("theorem verification needs ≥ 100 trials, got {}", cfg.trials)));
    }
    if cfg.steps.is_empty() || cfg.grid_size == 0 || !(0.0..=1.0).contains(&cfg.edge_density) {
        return Err(param("theorem config needs step counts, a positive grid size and a density in [0,1]"));
    }
    let pairs: Vec<(ImageGrid, ImageGrid)> = (0..cfg.trials)
        .map(|k| {
            let mut r = rng::stream(cfg.seed, k as u64);
            let a = random_structure(cfg.grid_size, cfg.edge_density, &mut r);
            let b = random_structure(cfg.grid_size, cfg.edge_density, &mut r);
            (a, b)
        })
        .collect();
    let pixels = (cfg.grid_size * cfg.grid_size) as f64;
    let mut rows = Vec::with_capacity(cfg.steps.len());
    for &t in &cfg.steps {
        let sched = ScheduleConfig { steps: t, ..cfg.schedule.clone() }.build()?;
        let (mut l2, mut eq) = (0.0, 0.0f64);
        for (init, lq) in &pairs {
            l2 += run_structural_dynamics(init, lq, &sched)?.l2_distance(lq)?;
            eq = eq.max(run_structural_dynamics(lq, lq, &sched)?.l2_distance(lq)?);
        }
        let mean_l2 = l2 / cfg.trials as f64;
        rows.push(TheoremRow {
            steps: t,
            decay_factor: structural_decay_factor(&sched),
            mean_l2_error: mean_l2,
            mean_rms_error: mean_l2 / pixels.sqrt(),
            equilibrium_error: eq,
        });
    }
    Ok(TheoremReport { trials: cfg.trials, rows, bound: None })
}
