use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Shape of the continuous mean-reversion rate `θ(t)` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaProfile {
    /// `θ(t) = θmin + (θmax − θmin)·t/T`.
    Linear,
    /// `θ(t) = θmin + (θmax − θmin)·sin²(πt / 2T)`: flat near `t = 0`,
    /// steepest mid-way.
    CosineFlipped,
}

impl std::fmt::Display for ThetaProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThetaProfile::Linear => "linear",
            ThetaProfile::CosineFlipped => "cosine-flipped",
        })
    }
}

/// Serializable schedule parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub kappa2: f64,
    pub profile: ThetaProfile,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            kappa2: 10.0,
            profile: ThetaProfile::CosineFlipped,
            theta_min: 0.005,
            theta_max: 0.2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<SdeSchedule> {
        build_schedule(self.steps, self.kappa2, self.profile, self.theta_min, self.theta_max)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schedule config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| crate::Error::Format(e.to_string()))
    }
}

/// Discretized mean-reverting schedule on unit steps `t = 0, 1, …, T`.
///
/// Index conventions: `theta`, `theta_prime` and `sigma2` are indexed by step
/// `i ∈ 1..=T` through the accessors (stored at `i − 1`); `theta_bar` and `v`
/// are indexed by time `t ∈ 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeSchedule {
    kappa2: f64,
    theta: Vec<f64>,
    theta_prime: Vec<f64>,
    theta_bar: Vec<f64>,
    sigma2: Vec<f64>,
    v: Vec<f64>,
    config: Option<ScheduleConfig>,
}

pub fn build_schedule(
    steps: usize,
    kappa2: f64,
    profile: ThetaProfile,
    theta_min: f64,
    theta_max: f64,
) -> Result<SdeSchedule> {
    if steps == 0 {
        return Err(param("step count T must be at least 1"));
    }
    if !(kappa2 > 0.0 && kappa2.is_finite()) {
        return Err(param(format!("kappa2 must be positive, got {kappa2}")));
    }
    if !(theta_min > 0.0 && theta_min <= theta_max && theta_max.is_finite()) {
        return Err(param(format!(
            "need 0 < theta_min <= theta_max, got [{theta_min}, {theta_max}]"
        )));
    }
    let horizon = steps as f64;
    let span = theta_max - theta_min;
    let rate = |t: f64| match profile {
        ThetaProfile::Linear => theta_min + span * t / horizon,
        ThetaProfile::CosineFlipped => {
            let s = (std::f64::consts::FRAC_PI_2 * t / horizon).sin();
            theta_min + span * s * s
        }
    };
    let rule = GaussLegendre::new(64);
    let mut theta = Vec::with_capacity(steps);
    let mut theta_prime = Vec::with_capacity(steps);
    for i in 1..=steps {
        let (a, b) = ((i - 1) as f64, i as f64);
        theta.push(rate(b));
        theta_prime.push(match profile {
            ThetaProfile::Linear => theta_min + span * (b - 0.5) / horizon,
            ThetaProfile::CosineFlipped => rule.integrate(&rate, a, b),
        });
    }
    let mut sched = SdeSchedule::from_rates(theta, theta_prime, kappa2)?;
    sched.config = Some(ScheduleConfig { steps, kappa2, profile, theta_min, theta_max });
    Ok(sched)
}

impl SdeSchedule {
    /// Schedule from explicit per-step rates `θᵢ` and step integrals `θ′ᵢ`.
    pub fn from_rates(theta: Vec<f64>, theta_prime: Vec<f64>, kappa2: f64) -> Result<Self> {
        if theta.is_empty() || theta.len() != theta_prime.len() {
            return Err(param("theta and theta_prime must be non-empty and of equal length"));
        }
        if !(kappa2 > 0.0 && kappa2.is_finite()) {
            return Err(param(format!("kappa2 must be positive, got {kappa2}")));
        }
        for (i, (&th, &tp)) in theta.iter().zip(&theta_prime).enumerate() {
            if !(th > 0.0 && th.is_finite()) || !(tp > 0.0 && tp.is_finite()) {
                return Err(param(format!(
                    "step {}: rates must be positive and finite (theta = {th}, theta' = {tp})",
                    i + 1
                )));
            }
        }
        let mut theta_bar = Vec::with_capacity(theta.len() + 1);
        theta_bar.push(0.0);
        let mut acc = 0.0;
        for &tp in &theta_prime {
            acc += tp;
            theta_bar.push(acc);
        }
        let v = theta_bar.iter().map(|&tb| kappa2 * -(-2.0 * tb).exp_m1()).collect();
        let sigma2 = theta.iter().map(|&th| 2.0 * kappa2 * th).collect();
        Ok(Self { kappa2, theta, theta_prime, theta_bar, sigma2, v, config: None })
    }

    pub fn steps(&self) -> usize {
        self.theta.len()
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn config(&self) -> Option<&ScheduleConfig> {
        self.config.as_ref()
    }

    /// Rate `θᵢ` of step `i ∈ 1..=T`.
    pub fn theta(&self, i: usize) -> f64 {
        self.theta[i - 1]
    }

    /// Step integral `θ′ᵢ = ∫_{i−1}^{i} θ`.
    pub fn theta_prime(&self, i: usize) -> f64 {
        self.theta_prime[i - 1]
    }

    /// `σᵢ² = 2κ²θᵢ`.
    pub fn sigma2(&self, i: usize) -> f64 {
        self.sigma2[i - 1]
    }

    /// Cumulative integral `θ̄ₜ`, `t ∈ 0..=T`.
    pub fn theta_bar(&self, t: usize) -> f64 {
        self.theta_bar[t]
    }

    /// Marginal variance `vₜ = κ²(1 − e^{−2θ̄ₜ})`.
    pub fn variance(&self, t: usize) -> f64 {
        self.v[t]
    }

    pub fn theta_bar_all(&self) -> &[f64] {
        &self.theta_bar
    }

    pub fn variance_all(&self) -> &[f64] {
        &self.v
    }

    /// Dimensionless posterior factor
    /// `β̃ₜ = (1 − e^{−2θ̄ₜ₋₁})(1 − e^{−2θ′ₜ}) / (1 − e^{−2θ̄ₜ})`.
    pub fn beta_tilde(&self, t: usize) -> f64 {
        let a = -(-2.0 * self.theta_bar[t - 1]).exp_m1();
        let b = -(-2.0 * self.theta_prime[t - 1]).exp_m1();
        let c = -(-2.0 * self.theta_bar[t]).exp_m1();
        a * b / c
    }

    /// Stable 64-bit fingerprint of the discretization, recorded in
    /// checkpoints so a model is never sampled with a foreign schedule.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: f64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.kappa2);
        self.theta.iter().chain(&self.theta_prime).for_each(|&x| eat(x));
        h
    }
}

/// Gauss–Legendre rule on `[-1, 1]`, nodes found by Newton iteration on `Pₙ`.
pub(crate) struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub(crate) fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub(crate) fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(mid + half * x)).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Midpoint rule with 10⁴ substeps over `[0, T]`.
    fn midpoint_quadrature(f: impl Fn(f64) -> f64, horizon: f64) -> f64 {
        let n = 10_000;
        let h = horizon / n as f64;
        (0..n).map(|k| f((k as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn paper_kappa_gives_sigma_ratio() {
        let s = build_schedule(100, 10.0, ThetaProfile::Linear, 0.01, 1.0).unwrap();
        assert!(s.variance(100) <= 10.0);
        for i in 1..=100 {
            assert_relative_eq!(s.sigma2(i), 20.0 * s.theta(i), max_relative = 1e-12);
        }
    }

    #[test]
    fn single_step_integral_identity() {
        for profile in [ThetaProfile::Linear, ThetaProfile::CosineFlipped] {
            let s = build_schedule(1, 2.0, profile, 0.1, 0.5).unwrap();
            assert_eq!(s.theta_bar(1), s.theta_prime(1));
            assert_eq!(s.variance(0), 0.0);
        }
    }

    #[test]
    fn cumulative_matches_high_resolution_quadrature() {
        let (lo, hi) = (0.01, 1.0);
        let lin = build_schedule(100, 10.0, ThetaProfile::Linear, lo, hi).unwrap();
        let exact_sum: f64 = (1..=100).map(|i| lin.theta_prime(i)).sum();
        assert_eq!(lin.theta_bar(100), exact_sum);
        let oracle = midpoint_quadrature(|t| lo + (hi - lo) * t / 100.0, 100.0);
        assert_relative_eq!(lin.theta_bar(100), oracle, max_relative = 1e-9);

        let cos = build_schedule(100, 10.0, ThetaProfile::CosineFlipped, lo, hi).unwrap();
        let oracle = midpoint_quadrature(
            |t| {
                let s = (std::f64::consts::FRAC_PI_2 * t / 100.0).sin();
                lo + (hi - lo) * s * s
            },
            100.0,
        );
        assert_relative_eq!(cos.theta_bar(100), oracle, max_relative = 1e-8);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(build_schedule(0, 1.0, ThetaProfile::Linear, 0.1, 0.2).is_err());
        assert!(build_schedule(10, 0.0, ThetaProfile::Linear, 0.1, 0.2).is_err());
        assert!(build_schedule(10, 1.0, ThetaProfile::Linear, 0.0, 0.2).is_err());
        assert!(build_schedule(10, 1.0, ThetaProfile::Linear, 0.3, 0.2).is_err());
        assert!(SdeSchedule::from_rates(vec![0.1, 0.0], vec![0.1, 0.1], 1.0).is_err());
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let rule = GaussLegendre::new(64);
        assert_relative_eq!(rule.integrate(|x| x.powi(7) + 3.0 * x * x, 0.0, 2.0), 32.0 + 8.0, max_relative = 1e-13);
        assert_relative_eq!(rule.weights.iter().sum::<f64>(), 2.0, max_relative = 1e-13);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ScheduleConfig::default();
        let text = cfg.to_toml();
        assert!(text.contains("T = 100"));
        assert!(text.contains("profile = \"cosine-flipped\""));
        assert_eq!(ScheduleConfig::from_toml(&text).unwrap(), cfg);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn invariants_hold(steps in 1usize..300, kappa2 in 0.01f64..50.0,
                               lo in 0.001f64..0.5, extra in 0.0f64..2.0, linear in any::<bool>()) {
                let profile = if linear { ThetaProfile::Linear } else { ThetaProfile::CosineFlipped };
                let s = build_schedule(steps, kappa2, profile, lo, lo + extra).unwrap();
                prop_assert_eq!(s.variance(0), 0.0);
                for t in 1..=steps {
                    prop_assert!(s.theta_bar(t) > s.theta_bar(t - 1));
                    prop_assert!(s.variance(t) >= s.variance(t - 1));
                    prop_assert!((s.sigma2(t) / s.theta(t) - 2.0 * kappa2).abs() <= 1e-12 * kappa2);
                    let b = s.beta_tilde(t);
                    prop_assert!((0.0..1.0).contains(&b));
                }
                prop_assert!(s.variance(steps) <= kappa2);
                prop_assert_eq!(s.beta_tilde(1), 0.0);
            }
        }
    }
}
