//! Noise-matching training of the score network.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sldm::rng::{self, Rng};
use sldm::sde::{sample_forward_with_rng, SdeSchedule};
use sldm::{AugmentedState, ImageGrid};

use crate::checkpoint::Checkpoint;
use crate::error::{input, Error, Result};
use crate::params::{Adam, AdamConfig};
use crate::score::{ScoreNetConfig, ScoreNetwork};
use crate::semantic::SemanticContext;

/// One `(x̃₀, μ̃, semantic)` training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub x0: AugmentedState,
    pub mu: AugmentedState,
    pub semantic: Option<SemanticContext>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossNorm {
    #[default]
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub network: ScoreNetConfig,
    pub learning_rate: f64,
    /// The rate halves after every this many iterations.
    pub lr_halving_every: usize,
    pub batch_size: usize,
    pub iterations: usize,
    /// Constant loss weight `γₜ`.
    pub loss_weight: f64,
    pub loss: LossNorm,
    pub adam: AdamConfig,
    /// Emit a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            network: ScoreNetConfig::default(),
            learning_rate: 1e-4,
            lr_halving_every: 200_000,
            batch_size: 16,
            iterations: 20_000,
            loss_weight: 1.0,
            loss: LossNorm::L1,
            adam: AdamConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if !(self.learning_rate > 0.0 && self.loss_weight > 0.0) || self.batch_size == 0 || self.lr_halving_every == 0 {
            return Err(input("learning rate and loss weight must be positive, batch and halving period ≥ 1"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((iteration / self.lr_halving_every) as i32)
    }
}

/// Random time steps, noise fields and the resulting noisy states.
#[derive(Debug, Clone, PartialEq)]
pub struct LossDraws {
    pub t: Vec<usize>,
    pub noise: Vec<ImageGrid>,
    pub x_t: Vec<ImageGrid>,
}

impl LossDraws {
    /// `t ~ U{1..T}` and `ε ~ N(0, I)` per sample, `xₜ` from the forward marginal.
    pub fn sample(batch: &[&TrainingExample], sched: &SdeSchedule, r: &mut Rng) -> Result<Self> {
        let mut d = Self { t: Vec::new(), noise: Vec::new(), x_t: Vec::new() };
        for e in batch {
            let t = r.random_range(1..=sched.steps());
            let (x, eps) = sample_forward_with_rng(e.x0.grid(), e.mu.grid(), sched, t, r)?;
            d.t.push(t);
            d.noise.push(eps);
            d.x_t.push(x);
        }
        Ok(d)
    }
}

fn norm_of(diff: f64, norm: LossNorm) -> f64 {
    match norm {
        LossNorm::L1 => diff.abs(),
        LossNorm::L2 => diff * diff,
    }
}

/// Loss of an arbitrary noise predictor on `batch` with draws from stream
/// `(rng_seed, 0)`: `γ·mean ‖ε̂ − ε‖` over every element of every channel.
pub fn training_loss_with(
    predict: &dyn Fn(&[ImageGrid], &[ImageGrid], &[usize], &LossDraws) -> Result<Vec<ImageGrid>>,
    batch: &[TrainingExample],
    sched: &SdeSchedule,
    rng_seed: u64,
    norm: LossNorm,
    weight: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(input("training loss needs a non-empty batch"));
    }
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let draws = LossDraws::sample(&refs, sched, &mut rng::stream(rng_seed, 0))?;
    let means: Vec<ImageGrid> = batch.iter().map(|e| e.mu.grid().clone()).collect();
    let eps_hat = predict(&draws.x_t, &means, &draws.t, &draws)?;
    let (mut s, mut n) = (0.0, 0usize);
    for (p, e) in eps_hat.iter().zip(&draws.noise) {
        p.ensure_same_shape(e, "predicted noise")?;
        s += p.data().iter().zip(e.data()).map(|(a, b)| norm_of(a - b, norm)).sum::<f64>();
        n += e.len();
    }
    Ok(weight * s / n as f64)
}

/// Network loss on `batch` with the same draws as [`training_loss_with`].
pub fn training_loss(net: &ScoreNetwork, batch: &[TrainingExample], rng_seed: u64, cfg: &TrainingConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(input("training loss needs a non-empty batch"));
    }
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let draws = LossDraws::sample(&refs, net.schedule(), &mut rng::stream(rng_seed, 0))?;
    let (g, loss) = net.loss_graph(net.params(), &refs, &draws, cfg.loss, cfg.loss_weight)?;
    Ok(g.value(loss).data()[0] as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: ScoreNetwork,
    pub checkpoint: Checkpoint,
}

fn echo(cfg: &TrainingConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("training config serializes")
}

/// Trains a freshly initialized network for `cfg.iterations` steps.
pub fn train(dataset: &[TrainingExample], cfg: &TrainingConfig, sched: &SdeSchedule, rng_seed: u64) -> Result<TrainOutcome> {
    train_resumable(dataset, cfg, sched, rng_seed, None, &mut |_| Ok(()))
}

/// Trains from scratch or continues `resume` up to `cfg.iterations`.
/// Iteration `i` draws from stream `(rng_seed, i)`, so an interrupted and
/// resumed run reproduces an uninterrupted one. `sink` receives periodic
/// checkpoints.
pub fn train_resumable(
    dataset: &[TrainingExample],
    cfg: &TrainingConfig,
    sched: &SdeSchedule,
    rng_seed: u64,
    resume: Option<&Checkpoint>,
    sink: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(input("training dataset is empty"));
    }
    cfg.validate()?;
    let (mut net, mut opt, mut curve, start) = match resume {
        None => {
            let net = ScoreNetwork::new(cfg.network.clone(), sched, rng::derive_seed(rng_seed, u64::MAX))?;
            let opt = Adam::new(cfg.adam, net.parameter_count());
            (net, opt, Vec::new(), 0)
        }
        Some(c) => {
            let net = ScoreNetwork::from_checkpoint(c, sched)?;
            if net.config() != &cfg.network {
                return Err(Error::Checkpoint("checkpoint architecture differs from the training config".into()));
            }
            let (m, v) = c.optimizer.clone().ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
            let opt = Adam { config: cfg.adam, step: c.header.optimizer_step.unwrap_or(0), m, v };
            (net, opt, c.header.loss_curve.clone(), c.header.iteration)
        }
    };
    for it in start..cfg.iterations {
        let mut r = rng::stream(rng_seed, it as u64);
        let batch: Vec<&TrainingExample> =
            (0..cfg.batch_size).map(|_| &dataset[r.random_range(0..dataset.len())]).collect();
        let draws = LossDraws::sample(&batch, sched, &mut r)?;
        let (g, loss) = net.loss_graph(net.params(), &batch, &draws, cfg.loss, cfg.loss_weight)?;
        let value = g.value(loss).data()[0] as f64;
        let grads = g.backward(loss).for_params(&g, net.params());
        if !value.is_finite() || grads.iter().flatten().any(|v| !v.is_finite()) {
            let last_good = net.to_checkpoint(it, rng_seed, echo(cfg), curve, Some(&opt));
            return Err(Error::NonFiniteLoss { iteration: it + 1, last_good: Box::new(last_good) });
        }
        curve.push(value);
        opt.update(net.params_mut(), &grads, cfg.learning_rate_at(it));
        if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
            sink(&net.to_checkpoint(it + 1, rng_seed, echo(cfg), curve.clone(), Some(&opt)))?;
        }
        if (it + 1) % 100 == 0 {
            log::debug!("iteration {} loss {value:.5}", it + 1);
        }
    }
    let checkpoint = net.to_checkpoint(cfg.iterations.max(start), rng_seed, echo(cfg), curve, Some(&opt));
    Ok(TrainOutcome { network: net, checkpoint })
}

/// Denominator floor of the gradient-check relative error. Parameters whose
/// gradient vanishes structurally (a bias cancelled by a following norm) only
/// carry roundoff, which is compared on an absolute scale instead.
const GRADIENT_CHECK_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientProbe {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// Compares analytic training-loss gradients with central differences in
/// double precision. One probe is taken from each of `probes` parameter
/// tensors spread over the network, at that tensor's largest-magnitude
/// gradient entry.
pub fn gradient_check(
    net: &ScoreNetwork,
    batch: &[TrainingExample],
    rng_seed: u64,
    norm: LossNorm,
    probes: usize,
    step: f64,
) -> Result<Vec<GradientProbe>> {
    if batch.is_empty() || probes == 0 {
        return Err(input("gradient check needs a batch and at least one probe"));
    }
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let draws = LossDraws::sample(&refs, net.schedule(), &mut rng::stream(rng_seed, 0))?;
    let params = net.params().cast::<f64>();
    let (g, loss) = net.loss_graph(&params, &refs, &draws, norm, 1.0)?;
    let grads = g.backward(loss).for_params(&g, &params);
    let ids: Vec<_> = params.ids().collect();
    let eval = |p: &crate::params::ParamStore<f64>| -> Result<f64> {
        let (g, l) = net.loss_graph(p, &refs, &draws, norm, 1.0)?;
        Ok(g.value(l).data()[0])
    };
    let mut out = Vec::with_capacity(probes);
    for k in 0..probes.min(ids.len()) {
        let id = ids[k * ids.len() / probes.min(ids.len())];
        let gt = &grads[id.index()];
        let index = (0..gt.len()).fold(0, |b, i| if gt[i].abs() > gt[b].abs() { i } else { b });
        let mut plus = params.clone();
        plus.value_mut(id).data_mut()[index] += step;
        let mut minus = params.clone();
        minus.value_mut(id).data_mut()[index] -= step;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
        let analytic = gt[index];
        let relative_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR);
        out.push(GradientProbe { parameter: params.name(id).to_string(), index, analytic, numeric, relative_error });
    }
    Ok(out)
}
