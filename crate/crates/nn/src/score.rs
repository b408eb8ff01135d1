//! Conditional noise-prediction network over augmented states.
//!
//! The network sees `[(xₜ − μ)·c_in(t), μ]` (six channels) and a sinusoidal
//! embedding of `t`, and predicts the residual `r̂ = x₀ − μ`. The noise
//! estimate follows from the forward marginal:
//! `ε̂ = (xₜ − μ − e^{−θ̄ₜ}·r̂)/√vₜ`.

use serde::{Deserialize, Serialize};
use sldm::rng;
use sldm::sde::{NoisePredictor, SdeSchedule};
use sldm::{AugmentedState, ImageGrid};

use crate::checkpoint::{Checkpoint, CheckpointHeader, FORMAT_VERSION};
use crate::error::{input, Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Adam, ParamId, ParamStore};
use crate::semantic::{SemanticContext, CONTEXT_DIM};
use crate::tensor::{Element, Tensor};

/// Channels of an augmented state.
pub const STATE_CHANNELS: usize = 3;
/// Width of the positional features appended to bottleneck queries.
const POS_DIM: usize = 4;
/// Data-scale term in the input normalization `c_in = 1/√(vₜ + σ_d²e^{−2θ̄ₜ})`.
const DATA_VARIANCE: f64 = 0.01;
const RESIDUAL_SCALE_FLOOR: f64 = 1e-9;
/// Upper bound on channel groups per normalization layer.
const NORM_GROUPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreNetConfig {
    /// Channel width per resolution level; each level after the first
    /// halves the resolution.
    pub widths: Vec<usize>,
    pub res_blocks: usize,
    /// Width of the sinusoidal time features.
    pub time_dim: usize,
    pub attention_dim: usize,
    pub cross_attention: bool,
}

impl Default for ScoreNetConfig {
    fn default() -> Self {
        Self { widths: vec![32, 64, 128], res_blocks: 2, time_dim: 64, attention_dim: 32, cross_attention: true }
    }
}

impl ScoreNetConfig {
    /// Reduced widths for CPU-only runs.
    pub fn desk() -> Self {
        Self { widths: vec![16, 32, 64], res_blocks: 1, time_dim: 32, attention_dim: 32, cross_attention: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(input("score network needs at least one non-zero width"));
        }
        if self.res_blocks == 0 || self.time_dim < 2 || self.time_dim % 2 != 0 || self.attention_dim == 0 {
            return Err(input("res_blocks ≥ 1, even time_dim ≥ 2 and attention_dim ≥ 1 required"));
        }
        Ok(())
    }

    /// Input side lengths must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.widths.len() - 1)
    }
}

#[derive(Debug, Clone)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: Norm,
    norm2: Norm,
    conv1: Affine,
    time: Affine,
    conv2: Affine,
    skip: Option<Affine>,
}

#[derive(Debug, Clone)]
struct AttentionBlock {
    q: Affine,
    pos: Affine,
    k: Affine,
    v: Affine,
    out: Affine,
}

#[derive(Debug, Clone)]
struct Layout {
    time1: Affine,
    time2: Affine,
    conv_in: Affine,
    down: Vec<Vec<ResBlock>>,
    downsample: Vec<Affine>,
    attention: Option<AttentionBlock>,
    upsample: Vec<Affine>,
    up: Vec<Vec<ResBlock>>,
    norm_out: Norm,
    conv_out: Affine,
}

struct Init<'a> {
    store: &'a mut ParamStore<f32>,
    rng: rng::Rng,
}

impl Init<'_> {
    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize, gain: f64) -> Affine {
        let std = gain * (2.0 / (cin * k * k) as f64).sqrt();
        Affine {
            w: self.store.add_normal(format!("{name}.w"), vec![cout, cin, k, k], std, &mut self.rng),
            b: self.store.add_zeros(format!("{name}.b"), vec![cout]),
        }
    }

    fn linear(&mut self, name: &str, out: usize, inp: usize, gain: f64) -> Affine {
        let std = gain * (2.0 / inp as f64).sqrt();
        Affine {
            w: self.store.add_normal(format!("{name}.w"), vec![out, inp], std, &mut self.rng),
            b: self.store.add_zeros(format!("{name}.b"), vec![out]),
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let groups = (1..=NORM_GROUPS.min(c)).rev().find(|g| c % g == 0).unwrap_or(1);
        Norm {
            gamma: self.store.add(format!("{name}.gamma"), Tensor::new(vec![c], vec![1.0; c])),
            beta: self.store.add_zeros(format!("{name}.beta"), vec![c]),
            groups,
        }
    }

    fn res_block(&mut self, name: &str, cin: usize, cout: usize, tdim: usize) -> ResBlock {
        ResBlock {
            norm1: self.norm(&format!("{name}.norm1"), cin),
            norm2: self.norm(&format!("{name}.norm2"), cout),
            conv1: self.conv(&format!("{name}.conv1"), cout, cin, 3, 1.0),
            time: self.linear(&format!("{name}.time"), cout, tdim, 1.0),
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, 3, 0.2),
            skip: (cin != cout).then(|| self.conv(&format!("{name}.skip"), cout, cin, 1, 1.0)),
        }
    }
}

fn build_layout(cfg: &ScoreNetConfig, seed: u64) -> (Layout, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let mut init = Init { store: &mut store, rng: rng::seeded(seed) };
    let w = &cfg.widths;
    let levels = w.len();
    let tdim = 2 * cfg.time_dim;
    let time1 = init.linear("time.l1", tdim, cfg.time_dim, 1.0);
    let time2 = init.linear("time.l2", tdim, tdim, 1.0);
    let conv_in = init.conv("in", w[0], 2 * STATE_CHANNELS, 3, 1.0);
    let mut down = Vec::new();
    let mut downsample = Vec::new();
    for l in 0..levels {
        down.push((0..cfg.res_blocks).map(|b| init.res_block(&format!("down{l}.{b}"), w[l], w[l], tdim)).collect());
        if l + 1 < levels {
            downsample.push(init.conv(&format!("down{l}.pool"), w[l + 1], w[l], 3, 1.0));
        }
    }
    let attention = cfg.cross_attention.then(|| {
        let (c, a) = (w[levels - 1], cfg.attention_dim);
        AttentionBlock {
            q: init.linear("attn.q", a, c, 0.5),
            pos: init.linear("attn.pos", a, POS_DIM, 0.5),
            k: init.linear("attn.k", a, CONTEXT_DIM, 0.5),
            v: init.linear("attn.v", a, CONTEXT_DIM, 1.0),
            out: init.linear("attn.out", c, a, 0.1),
        }
    });
    let mut upsample = Vec::new();
    let mut up = Vec::new();
    for l in 0..levels.saturating_sub(1) {
        upsample.push(init.conv(&format!("up{l}.conv"), w[l], w[l + 1], 3, 1.0));
        up.push(
            (0..cfg.res_blocks)
                .map(|b| init.res_block(&format!("up{l}.{b}"), if b == 0 { 2 * w[l] } else { w[l] }, w[l], tdim))
                .collect(),
        );
    }
    let norm_out = init.norm("out.norm", w[0]);
    let conv_out = init.conv("out", STATE_CHANNELS, w[0], 3, 0.1);
    let layout = Layout { time1, time2, conv_in, down, downsample, attention, upsample, up, norm_out, conv_out };
    (layout, store)
}

/// Network inputs in the graph's element type.
struct Inputs<E> {
    x: Tensor<E>,
    time: Tensor<E>,
    context: Tensor<E>,
    valid: Vec<usize>,
}

fn sinusoid(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let f = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        out.push((t as f64 * f).sin());
    }
    for i in 0..half {
        let f = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        out.push((t as f64 * f).cos());
    }
    out
}

/// Conditioning scale `c_in(t)` applied to `xₜ − μ`.
pub fn input_scale(sched: &SdeSchedule, t: usize) -> f64 {
    1.0 / (sched.variance(t) + DATA_VARIANCE * (-2.0 * sched.theta_bar(t)).exp()).sqrt()
}

/// Conditional score network with its parameters and the schedule it was
/// built for.
#[derive(Debug, Clone)]
pub struct ScoreNetwork {
    config: ScoreNetConfig,
    schedule: SdeSchedule,
    layout: Layout,
    params: ParamStore<f32>,
}

impl ScoreNetwork {
    pub fn new(config: ScoreNetConfig, schedule: &SdeSchedule, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, params) = build_layout(&config, seed);
        Ok(Self { config, schedule: schedule.clone(), layout, params })
    }

    pub fn config(&self) -> &ScoreNetConfig {
        &self.config
    }

    pub fn schedule(&self) -> &SdeSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    fn check_batch(&self, states: &[ImageGrid], means: &[ImageGrid], contexts: usize) -> Result<(usize, usize)> {
        let first = states.first().ok_or_else(|| input("empty batch"))?;
        if states.len() != means.len() || contexts != states.len() {
            return Err(input("states, means and contexts must have equal batch sizes"));
        }
        let (h, w) = (first.height(), first.width());
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 || h < m || w < m {
            return Err(input(format!("input {h}×{w} is not a multiple of {m}")));
        }
        for (s, mu) in states.iter().zip(means) {
            if s.channels() != STATE_CHANNELS {
                return Err(sldm::Error::Channels { expected: STATE_CHANNELS, got: s.channels() }.into());
            }
            s.ensure_same_shape(first, "score network batch")?;
            mu.ensure_same_shape(first, "score network condition")?;
        }
        Ok((h, w))
    }

    fn inputs<E: Element>(
        &self,
        states: &[ImageGrid],
        means: &[ImageGrid],
        t: &[usize],
        contexts: &[Option<&SemanticContext>],
    ) -> Result<Inputs<E>> {
        let (h, w) = self.check_batch(states, means, contexts.len())?;
        if t.len() != states.len() {
            return Err(input("one time index per sample required"));
        }
        let steps = self.schedule.steps();
        if let Some(&bad) = t.iter().find(|&&ti| ti == 0 || ti > steps) {
            return Err(sldm::Error::StepRange { step: bad, lo: 1, hi: steps }.into());
        }
        let n = states.len();
        let plane = STATE_CHANNELS * h * w;
        let mut x = Vec::with_capacity(n * 2 * plane);
        for ((s, mu), &ti) in states.iter().zip(means).zip(t) {
            let c = input_scale(&self.schedule, ti);
            x.extend(s.data().iter().zip(mu.data()).map(|(&a, &m)| E::from_f64((a - m) * c)));
            x.extend(mu.data().iter().map(|&m| E::from_f64(m)));
        }
        let td = self.config.time_dim;
        let time: Vec<E> = t.iter().flat_map(|&ti| sinusoid(ti, td)).map(E::from_f64).collect();
        let tokens: Vec<Vec<[f64; CONTEXT_DIM]>> =
            contexts.iter().map(|c| c.map_or(Ok(Vec::new()), |c| c.tokens())).collect::<Result<_>>()?;
        let m = tokens.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut context = vec![E::ZERO; n * m * CONTEXT_DIM];
        for (i, tk) in tokens.iter().enumerate() {
            for (j, row) in tk.iter().enumerate() {
                for (d, &v) in row.iter().enumerate() {
                    context[(i * m + j) * CONTEXT_DIM + d] = E::from_f64(v);
                }
            }
        }
        Ok(Inputs {
            x: Tensor::new(vec![n, 2 * STATE_CHANNELS, h, w], x),
            time: Tensor::new(vec![n, td], time),
            context: Tensor::new(vec![n, m, CONTEXT_DIM], context),
            valid: tokens.iter().map(Vec::len).collect(),
        })
    }

    /// Builds the forward pass and returns the residual prediction node.
    fn forward<E: Element>(&self, g: &mut Graph<E>, params: &ParamStore<E>, inp: Inputs<E>) -> Var {
        let l = &self.layout;
        let p = |g: &mut Graph<E>, a: &Affine| (g.param(params, a.w), g.param(params, a.b));
        let lin = |g: &mut Graph<E>, x: Var, a: &Affine| {
            let (w, b) = p(g, a);
            g.linear(x, w, b)
        };
        let conv = |g: &mut Graph<E>, x: Var, a: &Affine, stride: usize| {
            let (w, b) = p(g, a);
            let k = g.shape(w)[2];
            g.conv2d(x, w, b, stride, k / 2)
        };
        let norm = |g: &mut Graph<E>, x: Var, nm: &Norm| {
            let (gamma, beta) = (g.param(params, nm.gamma), g.param(params, nm.beta));
            g.group_norm(x, gamma, beta, nm.groups)
        };
        let res = |g: &mut Graph<E>, x: Var, blk: &ResBlock, temb: Var| {
            let a = norm(g, x, &blk.norm1);
            let a = g.silu(a);
            let a = conv(g, a, &blk.conv1, 1);
            let a = norm(g, a, &blk.norm2);
            let tb = lin(g, temb, &blk.time);
            let a = g.channel_bias(a, tb);
            let a = g.silu(a);
            let a = conv(g, a, &blk.conv2, 1);
            let skip = match &blk.skip {
                Some(s) => conv(g, x, s, 1),
                None => x,
            };
            g.add(skip, a)
        };

        let n = inp.x.shape()[0];
        let t0 = g.constant(inp.time);
        let temb = lin(g, t0, &l.time1);
        let temb = g.silu(temb);
        let temb = lin(g, temb, &l.time2);
        let temb = g.silu(temb);

        let x0 = g.constant(inp.x);
        let mut h = conv(g, x0, &l.conv_in, 1);
        let mut skips = Vec::new();
        for (lvl, blocks) in l.down.iter().enumerate() {
            for blk in blocks {
                h = res(g, h, blk, temb);
            }
            if let Some(ds) = l.downsample.get(lvl) {
                skips.push(h);
                h = conv(g, h, ds, 2);
            }
        }
        if let Some(att) = &l.attention {
            let (_, c, hb, wb) = match *g.shape(h) {
                [a, b, c, d] => (a, b, c, d),
                _ => unreachable!("activations are NCHW"),
            };
            let len = hb * wb;
            let a = self.config.attention_dim;
            let tokens = g.to_tokens(h);
            let flat = g.reshape(tokens, vec![n * len, c]);
            let q = lin(g, flat, &att.q);
            let mut pos = Vec::with_capacity(n * len * POS_DIM);
            for _ in 0..n {
                for y in 0..hb {
                    for x in 0..wb {
                        let (fy, fx) = ((y as f64 + 0.5) / hb as f64, (x as f64 + 0.5) / wb as f64);
                        pos.extend([fx, fy, fx * fx, fy * fy].map(E::from_f64));
                    }
                }
            }
            let pos = g.constant(Tensor::new(vec![n * len, POS_DIM], pos));
            let qp = lin(g, pos, &att.pos);
            let q = g.add(q, qp);
            let q = g.reshape(q, vec![n, len, a]);
            let m = inp.context.shape()[1];
            let ctx = g.constant(inp.context.reshaped(vec![n * m, CONTEXT_DIM]));
            let k = lin(g, ctx, &att.k);
            let k = g.reshape(k, vec![n, m, a]);
            let v = lin(g, ctx, &att.v);
            let v = g.reshape(v, vec![n, m, a]);
            let o = g.attention(q, k, v, inp.valid);
            let o = g.reshape(o, vec![n * len, a]);
            let o = lin(g, o, &att.out);
            let o = g.reshape(o, vec![n, len, c]);
            let o = g.from_tokens(o, hb, wb);
            h = g.add(h, o);
        }
        for lvl in (0..l.up.len()).rev() {
            h = g.upsample2x(h);
            h = conv(g, h, &l.upsample[lvl], 1);
            h = g.concat(h, skips[lvl]);
            for blk in &l.up[lvl] {
                h = res(g, h, blk, temb);
            }
        }
        let h = norm(g, h, &l.norm_out);
        let h = g.silu(h);
        conv(g, h, &l.conv_out, 1)
    }

    /// Residual predictions `r̂ ≈ x₀ − μ` for a batch at time `t`.
    pub fn predict_residual(
        &self,
        states: &[ImageGrid],
        means: &[ImageGrid],
        t: usize,
        contexts: &[Option<&SemanticContext>],
    ) -> Result<Vec<ImageGrid>> {
        let ts = vec![t; states.len()];
        let inp = self.inputs::<f32>(states, means, &ts, contexts)?;
        let (h, w) = (states[0].height(), states[0].width());
        let mut g = Graph::new();
        let out = self.forward(&mut g, &self.params, inp);
        g.value(out)
            .data()
            .chunks(STATE_CHANNELS * h * w)
            .map(|c| ImageGrid::new(h, w, STATE_CHANNELS, c.iter().map(|&v| v as f64).collect()).map_err(Error::from))
            .collect()
    }

    /// Noise estimates `ε̂` for a batch at time `t`, converted from the
    /// residual prediction in double precision.
    pub fn predict_noise_batch(
        &self,
        states: &[ImageGrid],
        means: &[ImageGrid],
        t: usize,
        contexts: &[Option<&SemanticContext>],
    ) -> Result<Vec<ImageGrid>> {
        let r = self.predict_residual(states, means, t, contexts)?;
        let decay = (-self.schedule.theta_bar(t)).exp();
        let sd = self.schedule.variance(t).sqrt();
        let out: Vec<ImageGrid> = states
            .iter()
            .zip(means)
            .zip(&r)
            .map(|((x, mu), rh)| {
                let data = x
                    .data()
                    .iter()
                    .zip(mu.data())
                    .zip(rh.data())
                    .map(|((&xv, &m), &rv)| (xv - m - decay * rv) / sd)
                    .collect();
                ImageGrid::new(x.height(), x.width(), x.channels(), data)
            })
            .collect::<sldm::Result<_>>()?;
        if out.iter().any(|e| !e.all_finite()) {
            return Err(sldm::Error::NonFinite { step: t }.into());
        }
        Ok(out)
    }

    pub fn to_checkpoint(
        &self,
        iteration: usize,
        seed: u64,
        training: serde_json::Value,
        loss_curve: Vec<f64>,
        optimizer: Option<&Adam>,
    ) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                kind: "score".into(),
                architecture: serde_json::to_value(&self.config).expect("config serializes"),
                schedule_fingerprint: Some(self.schedule.fingerprint()),
                iteration,
                seed,
                training,
                loss_curve,
                param_shapes: self.params.shapes(),
                param_count: self.params.count(),
                optimizer_step: optimizer.map(|o| o.step),
            },
            params: self.params.flatten(),
            optimizer: optimizer.map(|o| (o.m.clone(), o.v.clone())),
        }
    }

    /// Restores a network; the schedule must match the one it was trained with.
    pub fn from_checkpoint(c: &Checkpoint, schedule: &SdeSchedule) -> Result<Self> {
        if c.header.kind != "score" {
            return Err(Error::Checkpoint(format!("expected a score checkpoint, found {:?}", c.header.kind)));
        }
        if c.header.schedule_fingerprint != Some(schedule.fingerprint()) {
            return Err(Error::Checkpoint("schedule fingerprint does not match the checkpoint".into()));
        }
        let config: ScoreNetConfig =
            serde_json::from_value(c.header.architecture.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut net = Self::new(config, schedule, 0)?;
        if net.params.shapes() != c.header.param_shapes {
            return Err(Error::Checkpoint("parameter layout does not match the architecture".into()));
        }
        net.params.load_flat(&c.params).map_err(Error::Checkpoint)?;
        Ok(net)
    }

    /// Builds the training-loss graph for explicit draws on any element type.
    pub(crate) fn loss_graph<E: Element>(
        &self,
        params: &ParamStore<E>,
        batch: &[&crate::train::TrainingExample],
        draws: &crate::train::LossDraws,
        norm: crate::train::LossNorm,
        weight: f64,
    ) -> Result<(Graph<E>, Var)> {
        let states = &draws.x_t;
        let means: Vec<ImageGrid> = batch.iter().map(|e| e.mu.grid().clone()).collect();
        let ctx: Vec<Option<&SemanticContext>> = batch.iter().map(|e| e.semantic.as_ref()).collect();
        let inp = self.inputs::<E>(states, &means, &draws.t, &ctx)?;
        let mut g = Graph::new();
        let r = self.forward(&mut g, params, inp);
        let per = g.value(r).len() / batch.len();
        let mut scale = Vec::with_capacity(batch.len());
        let mut offset = Vec::with_capacity(batch.len() * per);
        for ((x, mu), &t) in states.iter().zip(&means).zip(&draws.t) {
            let sd = self.schedule.variance(t).sqrt();
            // Below f32 resolution next to the O(1) offset; left in place it only
            // feeds subnormal gradients back through the network.
            let k = (-self.schedule.theta_bar(t)).exp() / sd;
            scale.push(E::from_f64(if k < RESIDUAL_SCALE_FLOOR { 0.0 } else { -k }));
            offset.extend(x.data().iter().zip(mu.data()).map(|(&a, &m)| E::from_f64((a - m) / sd)));
        }
        let shape = g.shape(r).to_vec();
        let eps_hat = g.affine_per_sample(r, scale, &Tensor::new(shape.clone(), offset));
        let target: Vec<E> = draws.noise.iter().flat_map(|e| e.data().iter().map(|&v| E::from_f64(v))).collect();
        let target = Tensor::new(shape, target);
        let loss = match norm {
            crate::train::LossNorm::L1 => g.l1_loss(eps_hat, &target),
            crate::train::LossNorm::L2 => g.l2_loss(eps_hat, &target),
        };
        let loss = if weight == 1.0 { loss } else { g.scale(loss, weight) };
        Ok((g, loss))
    }
}

/// Noise prediction for one state.
pub fn predict_noise(
    net: &ScoreNetwork,
    x_t: &AugmentedState,
    mu: &AugmentedState,
    t: usize,
    semantic: Option<&SemanticContext>,
) -> Result<ImageGrid> {
    let mut out = net.predict_noise_batch(
        std::slice::from_ref(x_t.grid()),
        std::slice::from_ref(mu.grid()),
        t,
        &[semantic],
    )?;
    Ok(out.remove(0))
}

/// Adapts a network and per-chain semantic contexts to the sampler.
pub struct NetworkPredictor<'a> {
    pub net: &'a ScoreNetwork,
    /// One entry per chain, or empty for no conditioning.
    pub contexts: Vec<Option<SemanticContext>>,
    /// Largest batch pushed through the network at once.
    pub chunk: usize,
}

impl<'a> NetworkPredictor<'a> {
    pub fn new(net: &'a ScoreNetwork, contexts: Vec<Option<SemanticContext>>) -> Self {
        Self { net, contexts, chunk: 16 }
    }
}

impl NoisePredictor for NetworkPredictor<'_> {
    fn predict_noise(&self, states: &[ImageGrid], means: &[ImageGrid], t: usize) -> sldm::Result<Vec<ImageGrid>> {
        let ctx: Vec<Option<&SemanticContext>> = if self.contexts.is_empty() {
            vec![None; states.len()]
        } else if self.contexts.len() == states.len() {
            self.contexts.iter().map(Option::as_ref).collect()
        } else {
            return Err(sldm::Error::Dimension("one semantic context per chain required".into()));
        };
        let mut out = Vec::with_capacity(states.len());
        let step = self.chunk.max(1);
        for start in (0..states.len()).step_by(step) {
            let end = (start + step).min(states.len());
            let part = self
                .net
                .predict_noise_batch(&states[start..end], &means[start..end], t, &ctx[start..end])
                .map_err(|e| match e {
                    Error::Core(c) => c,
                    other => sldm::Error::Parameter(other.to_string()),
                })?;
            out.extend(part);
        }
        Ok(out)
    }
}
