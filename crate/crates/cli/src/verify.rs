//! Numerical verification suite: closed-form transitions, reverse-step
//! optimality, structural fixed point, consistency theorem, analytic-score
//! sampling, preprocessing, and (with a trained run) the structure bound.

use serde::{Deserialize, Serialize};
use sldm::metrics::psnr;
use sldm::phantom::{hu_window, Split};
use sldm::rng;
use sldm::saem::fuse;
use sldm::sde::{
    build_schedule, forward_marginal, optimal_reverse_step, reverse_sample, sample_forward, AnalyticNoise, SampleOptions,
    SdeSchedule, ThetaProfile,
};
use sldm::structure::{
    estimate_consistency_bound, extract_topology, structural_fixed_point_check, verify_consistency_theorem, BoundEstimate,
    BoundSample, TheoremReport,
};
use sldm::{AugmentedState, ImageGrid};

use crate::config::RunConfig;
use crate::error::Result;
use crate::pipeline::Run;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, measured, threshold, detail: detail.into() }
    }

    fn failed(name: &str, err: impl std::fmt::Display) -> Self {
        Self::new(name, false, f64::NAN, f64::NAN, err.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub theorem: Option<TheoremReport>,
    pub bound: Option<BoundEstimate>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_names(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,passed,measured,threshold,detail\n");
        for c in &self.checks {
            s += &format!("{},{},{:.9e},{:.9e},\"{}\"\n", c.name, c.passed, c.measured, c.threshold, c.detail.replace('"', "'"));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            s += &format!("[{mark}] {:<22} measured {:<12.4e} threshold {:<12.4e} {}\n", c.name, c.measured, c.threshold, c.detail);
        }
        if let Some(t) = &self.theorem {
            s += "\n";
            s += &t.to_text();
        }
        if let Some(b) = &self.bound {
            s += &format!(
                "\nstructure bound over {} pairs: E|C(x0) - s_lq| = {:.4} <= K {:.4} * E|s0 - s_lq| {:.4} + eps_align {:.4} = {:.4}\n",
                b.samples,
                b.lhs,
                b.k_hat,
                b.mean_structure_error,
                b.eps_align,
                b.rhs()
            );
        }
        s += &format!("\noverall: {}\n", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

/// Monte-Carlo mean and variance of `sample_forward` against the closed
/// form at `t ∈ {1, T/2, T}`; returns the largest z-score.
pub fn marginal_check(sched: &SdeSchedule, samples: usize, seed: u64) -> Result<Check> {
    let n = samples.max(2);
    let x0 = ImageGrid::filled(1, n, 1, 0.8);
    let mu = ImageGrid::filled(1, n, 1, 0.3);
    let steps = sched.steps();
    let mut worst = 0.0f64;
    for t in [1, (steps / 2).max(1), steps] {
        let (m, v) = forward_marginal(&x0, &mu, sched, t)?;
        let x = sample_forward(&x0, &mu, sched, t, rng::derive_seed(seed, t as u64))?;
        let mean = x.mean();
        let var = x.data().iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let z_mean = (mean - m.data()[0]).abs() / (v / n as f64).sqrt();
        let z_var = (var - v).abs() / (v * (2.0 / (n - 1) as f64).sqrt());
        worst = worst.max(z_mean).max(z_var);
    }
    Ok(Check::new("forward_marginal", worst <= 4.0, worst, 4.0, format!("max z-score over 3 steps, N = {n}")))
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-11 {
        if fc < fd {
            (b, d, fd) = (d, c, fc);
            c = b - g * (b - a);
            fc = f(c);
        } else {
            (a, c, fc) = (c, d, fd);
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Negative log-likelihood of `xₜ₋₁` given `xₜ` and `x₀`, constants dropped.
pub fn reverse_nll(s: &SdeSchedule, t: usize, xt: f64, x0: f64, mu: f64) -> impl Fn(f64) -> f64 {
    let k2 = s.kappa2();
    let m_prev = mu + (x0 - mu) * (-s.theta_bar(t - 1)).exp();
    let v_prev = k2 * (1.0 - (-2.0 * s.theta_bar(t - 1)).exp());
    let a = (-s.theta_prime(t)).exp();
    let v_step = k2 * (1.0 - a * a);
    move |x| (x - m_prev).powi(2) / (2.0 * v_prev) + (xt - mu - (x - mu) * a).powi(2) / (2.0 * v_step)
}

/// Closed-form reverse step against a golden-section argmin of the
/// likelihood objective on random scalar instances with `t ≥ 2`.
pub fn reverse_step_check(sched: &SdeSchedule, instances: usize, seed: u64) -> Result<Check> {
    let mut r = rng::seeded(seed);
    let mut worst = 0.0f64;
    let steps = sched.steps();
    if steps < 2 {
        return Ok(Check::new("reverse_step_argmin", true, 0.0, 1e-6, "T = 1 has no interior reverse step"));
    }
    for k in 0..instances {
        let t = 2 + (rng::derive_seed(seed, k as u64) % (steps as u64 - 1)) as usize;
        let mut z = || rng::standard_normal(&mut r);
        let (xt, x0, mu) = (2.0 * z(), 0.5 + 0.2 * z(), 0.4 + 0.2 * z());
        let oracle = golden_min(reverse_nll(sched, t, xt, x0, mu), -50.0, 50.0);
        let g = |v: f64| ImageGrid::filled(1, 1, 1, v);
        let got = optimal_reverse_step(&g(xt), &g(x0), &g(mu), sched, t)?.data()[0];
        worst = worst.max((got - oracle).abs());
    }
    Ok(Check::new("reverse_step_argmin", worst < 1e-6, worst, 1e-6, format!("{instances} scalar instances")))
}

/// Structural residual for `s_i = s_gt` at every step of the configured,
/// a linear, and a cosine-flipped schedule.
pub fn fixed_point_check(sched: &SdeSchedule) -> Result<Check> {
    let s = ImageGrid::from_fn(8, 8, |y, x| ((y * 3 + x) % 4 == 0) as u8 as f64);
    let extra = [
        build_schedule(sched.steps(), sched.kappa2(), ThetaProfile::Linear, 0.01, 1.0)?,
        build_schedule(sched.steps(), sched.kappa2(), ThetaProfile::CosineFlipped, 0.005, 0.2)?,
    ];
    let mut worst = 0.0f64;
    for sc in std::iter::once(sched).chain(extra.iter()) {
        for t in 1..=sc.steps() {
            worst = worst.max(structural_fixed_point_check(&s, &s, sc, t)?);
        }
    }
    Ok(Check::new("structural_fixed_point", worst == 0.0, worst, 0.0, "all steps, three schedules"))
}

/// Reverse sampling driven by the exact conditional score recovers a known
/// target.
pub fn analytic_sampling_check(sched: &SdeSchedule, size: usize, seed: u64) -> Result<Check> {
    let x0 = ImageGrid::from_fn(size, size, |y, x| {
        let (fy, fx) = (y as f64 / size as f64, x as f64 / size as f64);
        0.3 + 0.4 * ((6.0 * fx).sin() * (4.0 * fy).cos()).abs()
    });
    let y0 = x0.map(|v| 0.35 + 0.5 * (v - 0.35));
    let edges = extract_topology(&x0, &crate::config::pipeline_edges())?;
    let target = AugmentedState::new(&x0, edges.grid())?;
    let mu = AugmentedState::new(&y0, edges.grid())?;
    let oracle = AnalyticNoise { targets: vec![target.grid().clone()], schedule: sched };
    let out = reverse_sample(&mu, &oracle, sched, seed, SampleOptions::default())?;
    let p = psnr(&out.x0_hat.image_channel(), &x0, 1.0)?;
    Ok(Check::new("analytic_score_sampling", p >= 40.0, p, 40.0, format!("PSNR dB on {size}×{size}")))
}

/// Window `[−300, 700]` HU at level 200, width 1000.
pub fn hu_window_check() -> Result<Check> {
    let raw = ImageGrid::new(1, 3, 1, vec![-500.0, 800.0, 200.0])?;
    let w = hu_window(&raw, 200.0, 1000.0, -300.0, 700.0)?;
    let expected = [0.0, 1.0, 0.5];
    let worst = w.data().iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(Check::new("hu_window", worst == 0.0, worst, 0.0, "-500→0, 800→1, 200→0.5"))
}

pub fn saem_identity_check() -> Result<Check> {
    let mut r = rng::seeded(3);
    let mask = ImageGrid::from_fn(16, 16, |_, _| rng::standard_normal(&mut r).abs());
    let sub = ImageGrid::from_fn(16, 16, |_, _| rng::standard_normal(&mut r));
    let out = fuse(&mask, &sub, 0.0)?;
    let d = out.data().iter().zip(mask.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(Check::new("saem_lambda_zero", d == 0.0, d, 0.0, "fuse(mask, sub, 0) = mask"))
}

/// Closed-form checks that need no trained model. A schedule that cannot
/// be built fails the suite immediately.
pub fn verify_suite(cfg: &RunConfig) -> VerifyReport {
    let mut report = VerifyReport::default();
    let sched = match cfg.schedule.build() {
        Ok(s) => s,
        Err(e) => {
            report.checks.push(Check::failed("schedule", e));
            return report;
        }
    };
    report.checks.push(Check::new("schedule", true, sched.variance(sched.steps()), sched.kappa2(), "v_T ≤ κ²"));
    let seed = cfg.seeds.verify;
    let v = &cfg.verify;
    let mut push = |c: Result<Check>, name: &str| report.checks.push(c.unwrap_or_else(|e| Check::failed(name, e)));
    push(marginal_check(&sched, v.marginal_samples, seed), "forward_marginal");
    push(reverse_step_check(&sched, v.reverse_instances, seed), "reverse_step_argmin");
    push(fixed_point_check(&sched), "structural_fixed_point");
    push(analytic_sampling_check(&sched, v.analytic_size, seed), "analytic_score_sampling");
    push(hu_window_check(), "hu_window");
    push(saem_identity_check(), "saem_lambda_zero");
    match verify_consistency_theorem(&v.theorem) {
        Ok(t) => {
            let last = t.rows.last().map_or(f64::NAN, |r| r.mean_rms_error);
            let dec = t.strictly_decreasing();
            report.checks.push(Check::new("theorem_decreasing", dec, t.rows.len() as f64, 0.0, "mean error strictly decreasing in T"));
            report.checks.push(Check::new("theorem_terminal", last <= 0.01, last, 0.01, "RMS structure error at the largest T"));
            report.theorem = Some(t);
        }
        Err(e) => report.checks.push(Check::failed("theorem_decreasing", e)),
    }
    report
}

/// Structure-bound terms for the trained model of `run` on its test split.
/// The second draw conditions on the first draw's structure channels and
/// reuses the same chain seeds.
pub fn structure_bound(run: &Run) -> Result<(BoundEstimate, f64)> {
    let mut pairs = run.split(Split::Test)?;
    let limit = run.config.verify.bound_pairs;
    if limit > 0 {
        pairs.truncate(limit);
    }
    let net = run.score_network()?;
    let (mus, ctx) = run.test_conditions(&pairs)?;
    let first: Vec<AugmentedState> = run.samples()?.into_iter().take(pairs.len()).collect();
    let mus_s0: Vec<AugmentedState> = pairs
        .iter()
        .zip(&first)
        .map(|((_, p), s)| AugmentedState::new(&p.ld_image, &s.structure_mean()))
        .collect::<sldm::Result<_>>()?;
    let second = run.sample_states(&net, &mus_s0, ctx, SampleOptions::default())?;
    let edges = &run.config.edges;
    let mut samples = Vec::with_capacity(pairs.len());
    let mut mae = 0.0;
    for ((mu, a), b) in mus.iter().zip(&first).zip(&second) {
        let s_lq = mu.structure_mean();
        mae += a.structure_channels().mean_abs_diff(&mu.structure_channels())? / pairs.len() as f64;
        samples.push(BoundSample {
            s0: a.structure_mean(),
            edges_from_lq: extract_topology(&a.image_channel(), edges)?.into_grid(),
            edges_from_s0: extract_topology(&b.x0_hat.image_channel(), edges)?.into_grid(),
            s_lq,
        });
    }
    Ok((estimate_consistency_bound(&samples)?, mae))
}

/// [`verify_suite`] plus the structure bound when the run has samples.
pub fn verify_run(run: &Run) -> Result<VerifyReport> {
    let mut report = verify_suite(&run.config);
    if !report.passed() && report.check("schedule").is_some_and(|c| !c.passed) {
        return Ok(report);
    }
    if run.path("train/score.ckpt").exists() && run.manifest.completed("sample").is_some() {
        match structure_bound(run) {
            Ok((b, mae)) => {
                report.checks.push(Check::new("structure_bound", b.holds(), b.lhs, b.rhs(), format!("K̂ = {:.4}", b.k_hat)));
                report.checks.push(Check::new("structure_mae", mae <= 0.02, mae, 0.02, "output vs input structure channels"));
                report.bound = Some(b);
            }
            Err(e) => report.checks.push(Check::failed("structure_bound", e)),
        }
    }
    Ok(report)
}
