//! Descriptor/image alignment and the semantic context fed to the score
//! network's cross-attention.

use std::collections::BTreeSet;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};
use sldm::descriptor::{Descriptor, DESCRIPTOR_SLOTS, ROI_TOKEN_LEN};
use sldm::rng;
use sldm::ImageGrid;

use crate::checkpoint::{Checkpoint, CheckpointHeader, FORMAT_VERSION};
use crate::error::{input, Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Adam, AdamConfig, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const EMBED_DIM: usize = 64;
/// Context token width: an embedding slot followed by an ROI slot.
pub const CONTEXT_DIM: usize = EMBED_DIM + ROI_TOKEN_LEN;

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `v`; fails on an empty, zero or non-finite vector.
    pub fn normalized(v: Vec<f64>) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if v.is_empty() || !(n > 0.0) || !n.is_finite() {
            return Err(input("cannot normalize an empty, zero or non-finite vector"));
        }
        Ok(Self(v.into_iter().map(|x| x / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum::<f64>() / (self.norm() * other.norm())
    }
}

/// Conditioning tokens for one sample: an optional global embedding and one
/// token per region of interest.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemanticContext {
    pub embedding: Option<Embedding>,
    pub roi_tokens: Vec<[f64; ROI_TOKEN_LEN]>,
}

impl SemanticContext {
    pub fn from_descriptor(embedding: Embedding, d: &Descriptor) -> Self {
        Self { embedding: Some(embedding), roi_tokens: d.roi_tokens() }
    }

    pub fn from_embedding(embedding: Embedding) -> Self {
        Self { embedding: Some(embedding), roi_tokens: Vec::new() }
    }

    /// Key/value rows, each `CONTEXT_DIM` wide.
    pub fn tokens(&self) -> Result<Vec<[f64; CONTEXT_DIM]>> {
        let mut out = Vec::with_capacity(1 + self.roi_tokens.len());
        if let Some(e) = &self.embedding {
            if e.dim() != EMBED_DIM {
                return Err(input(format!("semantic embedding has dimension {}, expected {EMBED_DIM}", e.dim())));
            }
            let mut t = [0.0; CONTEXT_DIM];
            t[..EMBED_DIM].copy_from_slice(e.as_slice());
            out.push(t);
        }
        for r in &self.roi_tokens {
            let mut t = [0.0; CONTEXT_DIM];
            t[EMBED_DIM..].copy_from_slice(r);
            out.push(t);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    /// Cosines are divided by this before the softmax.
    pub temperature: f64,
    /// Average the image→descriptor and descriptor→image directions.
    pub symmetric: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { temperature: 0.07, symmetric: true }
    }
}

impl ContrastiveConfig {
    /// Unit temperature.
    pub fn strict() -> Self {
        Self { temperature: 1.0, symmetric: true }
    }
}

/// Mean softmax cross-entropy over cosine logits where entry `i` of each
/// list is the positive for entry `i` of the other.
pub fn contrastive_loss(image_embs: &[Embedding], desc_embs: &[Embedding], cfg: ContrastiveConfig) -> Result<f64> {
    if image_embs.is_empty() {
        return Err(input("contrastive loss needs a non-empty batch"));
    }
    if image_embs.len() != desc_embs.len() {
        return Err(input(format!("{} image embeddings vs {} descriptor embeddings", image_embs.len(), desc_embs.len())));
    }
    if !(cfg.temperature > 0.0) {
        return Err(input("temperature must be positive"));
    }
    let n = image_embs.len();
    let logits: Vec<Vec<f64>> =
        image_embs.iter().map(|a| desc_embs.iter().map(|b| a.cosine(b) / cfg.temperature).collect()).collect();
    let ce = |row: &dyn Fn(usize) -> Vec<f64>| -> f64 {
        (0..n)
            .map(|i| {
                let r = row(i);
                let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + r.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
                lse - r[i]
            })
            .sum::<f64>()
            / n as f64
    };
    let i2d = ce(&|i| logits[i].clone());
    if !cfg.symmetric {
        return Ok(i2d);
    }
    let d2i = ce(&|j| (0..n).map(|i| logits[i][j]).collect());
    Ok(0.5 * (i2d + d2i))
}

/// `softmax(Q·Kᵀ/√d)·V` on plain rows.
pub fn cross_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], d: usize) -> Result<Vec<Vec<f64>>> {
    if k.is_empty() || k.len() != v.len() {
        return Err(input("K and V need the same, non-zero number of rows"));
    }
    if q.iter().chain(k).any(|r| r.len() != d) {
        return Err(input(format!("Q and K rows must have width {d}")));
    }
    let dv = v[0].len();
    if v.iter().any(|r| r.len() != dv) {
        return Err(input("V rows differ in width"));
    }
    let scale = 1.0 / (d as f64).sqrt();
    Ok(q.iter()
        .map(|qr| {
            let s: Vec<f64> = k.iter().map(|kr| scale * qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>()).collect();
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..dv).map(|c| e.iter().zip(v).map(|(w, vr)| w / z * vr[c]).sum()).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub descriptor_hidden: usize,
    /// Widths of the four image-encoder convolutions; all but the first
    /// halve the resolution.
    pub image_widths: [usize; 4],
    pub contrastive: ContrastiveConfig,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            descriptor_hidden: 64,
            image_widths: [8, 16, 32, 64],
            contrastive: ContrastiveConfig::default(),
            learning_rate: 2e-3,
            iterations: 2000,
            batch_size: 16,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
struct AlignLayout {
    d1: (ParamId, ParamId),
    d2: (ParamId, ParamId),
    convs: Vec<(ParamId, ParamId)>,
    head: (ParamId, ParamId),
}

/// Descriptor encoder and image encoder sharing an `EMBED_DIM` space.
#[derive(Debug, Clone)]
pub struct AlignmentModel {
    config: AlignmentConfig,
    layout: AlignLayout,
    params: ParamStore<f32>,
}

fn he(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

impl AlignmentModel {
    pub fn new(config: AlignmentConfig, seed: u64) -> Result<Self> {
        if config.descriptor_hidden == 0 || config.image_widths.contains(&0) {
            return Err(input("alignment widths must be positive"));
        }
        let mut r = rng::seeded(seed);
        let mut p = ParamStore::new();
        let h = config.descriptor_hidden;
        let d1 = (p.add_normal("desc.l1.w", vec![h, DESCRIPTOR_SLOTS], he(DESCRIPTOR_SLOTS), &mut r), p.add_zeros("desc.l1.b", vec![h]));
        let d2 = (p.add_normal("desc.l2.w", vec![EMBED_DIM, h], he(h), &mut r), p.add_zeros("desc.l2.b", vec![EMBED_DIM]));
        let mut convs = Vec::new();
        let mut cin = 1;
        for (i, &c) in config.image_widths.iter().enumerate() {
            convs.push((
                p.add_normal(format!("img.conv{i}.w"), vec![c, cin, 3, 3], he(cin * 9), &mut r),
                p.add_zeros(format!("img.conv{i}.b"), vec![c]),
            ));
            cin = c;
        }
        let head = (p.add_normal("img.head.w", vec![EMBED_DIM, cin], he(cin), &mut r), p.add_zeros("img.head.b", vec![EMBED_DIM]));
        Ok(Self { config, layout: AlignLayout { d1, d2, convs, head }, params: p })
    }

    pub fn config(&self) -> &AlignmentConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    fn descriptor_graph(&self, g: &mut Graph<f32>, ds: &[&Descriptor]) -> Result<Var> {
        let mut slots = Vec::with_capacity(ds.len() * DESCRIPTOR_SLOTS);
        for d in ds {
            d.validate()?;
            slots.extend_from_slice(&d.to_slots());
        }
        let x = g.constant(Tensor::from_f64(vec![ds.len(), DESCRIPTOR_SLOTS], &slots));
        let l = &self.layout;
        let (w1, b1, w2, b2) =
            (g.param(&self.params, l.d1.0), g.param(&self.params, l.d1.1), g.param(&self.params, l.d2.0), g.param(&self.params, l.d2.1));
        let h = g.linear(x, w1, b1);
        let h = g.silu(h);
        let e = g.linear(h, w2, b2);
        Ok(g.l2_normalize(e))
    }

    fn image_graph(&self, g: &mut Graph<f32>, imgs: &[&ImageGrid]) -> Result<Var> {
        let first = imgs.first().ok_or_else(|| input("empty image batch"))?;
        let (h, w) = (first.height(), first.width());
        if h < 8 || w < 8 {
            return Err(input("image encoder needs at least 8×8 inputs"));
        }
        let mut data = Vec::with_capacity(imgs.len() * h * w);
        for im in imgs {
            im.ensure_single_channel()?;
            if im.height() != h || im.width() != w {
                return Err(input("image batch has mixed sizes"));
            }
            data.extend_from_slice(im.data());
        }
        let mut x = g.constant(Tensor::from_f64(vec![imgs.len(), 1, h, w], &data));
        for (i, &(cw, cb)) in self.layout.convs.iter().enumerate() {
            let (wv, bv) = (g.param(&self.params, cw), g.param(&self.params, cb));
            x = g.conv2d(x, wv, bv, if i == 0 { 1 } else { 2 }, 1);
            x = g.silu(x);
        }
        let pooled = g.global_avg_pool(x);
        let (hw, hb) = (g.param(&self.params, self.layout.head.0), g.param(&self.params, self.layout.head.1));
        let e = g.linear(pooled, hw, hb);
        Ok(g.l2_normalize(e))
    }

    fn embeddings(g: &Graph<f32>, v: Var) -> Result<Vec<Embedding>> {
        g.value(v).data().chunks(EMBED_DIM).map(|r| Embedding::normalized(r.iter().map(|&x| x as f64).collect())).collect()
    }

    pub fn encode_descriptor(&self, d: &Descriptor) -> Result<Embedding> {
        Ok(self.encode_descriptors(&[d])?.remove(0))
    }

    pub fn encode_descriptors(&self, ds: &[&Descriptor]) -> Result<Vec<Embedding>> {
        if ds.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let v = self.descriptor_graph(&mut g, ds)?;
        Self::embeddings(&g, v)
    }

    pub fn encode_image(&self, img: &ImageGrid) -> Result<Embedding> {
        Ok(self.encode_images(&[img])?.remove(0))
    }

    pub fn encode_images(&self, imgs: &[&ImageGrid]) -> Result<Vec<Embedding>> {
        let mut out = Vec::with_capacity(imgs.len());
        for chunk in imgs.chunks(32) {
            let mut g = Graph::new();
            let v = self.image_graph(&mut g, chunk)?;
            out.extend(Self::embeddings(&g, v)?);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, iteration: usize, seed: u64, loss_curve: Vec<f64>, optimizer: Option<&Adam>) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                kind: "alignment".into(),
                architecture: serde_json::to_value(&self.config).expect("config serializes"),
                schedule_fingerprint: None,
                iteration,
                seed,
                training: serde_json::to_value(&self.config).expect("config serializes"),
                loss_curve,
                param_shapes: self.params.shapes(),
                param_count: self.params.count(),
                optimizer_step: optimizer.map(|o| o.step),
            },
            params: self.params.flatten(),
            optimizer: optimizer.map(|o| (o.m.clone(), o.v.clone())),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.header.kind != "alignment" {
            return Err(Error::Checkpoint(format!("expected an alignment checkpoint, found {:?}", c.header.kind)));
        }
        let config: AlignmentConfig =
            serde_json::from_value(c.header.architecture.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut m = Self::new(config, 0)?;
        if m.params.shapes() != c.header.param_shapes {
            return Err(Error::Checkpoint("parameter layout does not match the architecture".into()));
        }
        m.params.load_flat(&c.params).map_err(Error::Checkpoint)?;
        Ok(m)
    }
}

/// Training pair for alignment: an image and its descriptor.
pub type AlignmentPair = (ImageGrid, Descriptor);

#[derive(Debug, Clone)]
pub struct AlignmentOutcome {
    pub model: AlignmentModel,
    pub loss_curve: Vec<f64>,
    pub warnings: Vec<String>,
    pub checkpoint: Checkpoint,
}

/// Contrastive training of both encoders. Iteration `i` draws its batch
/// from random stream `(seed, i)`.
pub fn pretrain_alignment(pairs: &[AlignmentPair], cfg: &AlignmentConfig, seed: u64) -> Result<AlignmentOutcome> {
    if pairs.len() < 2 {
        return Err(input("alignment needs at least two pairs"));
    }
    let distinct: BTreeSet<String> = pairs.iter().map(|(_, d)| d.to_string()).collect();
    if distinct.len() < 2 {
        return Err(input("alignment needs at least two distinct descriptors"));
    }
    if cfg.batch_size < 2 || !(cfg.learning_rate > 0.0) {
        return Err(input("alignment batch must be ≥ 2 and the learning rate positive"));
    }
    let mut warnings = Vec::new();
    let classes: BTreeSet<u8> = pairs.iter().map(|(_, d)| d.class_key()).collect();
    if classes.len() < 2 {
        let w = "all descriptors share one organ-label class; retrieval is only meaningful per instance".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    let mut model = AlignmentModel::new(cfg.clone(), rng::derive_seed(seed, 0))?;
    let mut opt = Adam::new(cfg.adam, model.params.count());
    let mut curve = Vec::with_capacity(cfg.iterations);
    let b = cfg.batch_size.min(pairs.len());
    for it in 0..cfg.iterations {
        let mut r = rng::stream(seed, it as u64 + 1);
        let idx = sample_indices(&mut r, pairs.len(), b).into_vec();
        let imgs: Vec<&ImageGrid> = idx.iter().map(|&i| &pairs[i].0).collect();
        let descs: Vec<&Descriptor> = idx.iter().map(|&i| &pairs[i].1).collect();
        let mut g = Graph::new();
        let ie = model.image_graph(&mut g, &imgs)?;
        let de = model.descriptor_graph(&mut g, &descs)?;
        let sim = g.matmul_nt(ie, de);
        let logits = g.scale(sim, 1.0 / cfg.contrastive.temperature);
        let mut loss = g.cross_entropy_diag(logits);
        if cfg.contrastive.symmetric {
            let lt = g.transpose(logits);
            let back = g.cross_entropy_diag(lt);
            let sum = g.add(loss, back);
            loss = g.scale(sum, 0.5);
        }
        let value = g.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it + 1,
                last_good: Box::new(model.to_checkpoint(it, seed, curve, Some(&opt))),
            });
        }
        curve.push(value);
        let grads = g.backward(loss).for_params(&g, &model.params);
        opt.update(&mut model.params, &grads, cfg.learning_rate);
    }
    let checkpoint = model.to_checkpoint(cfg.iterations, seed, curve.clone(), Some(&opt));
    Ok(AlignmentOutcome { model, loss_curve: curve, warnings, checkpoint })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub pairs: usize,
    /// Top-1 descriptor has the image's organ-label class.
    pub class_top1: f64,
    /// Top-1 descriptor is the image's own.
    pub instance_top1: f64,
    /// Own descriptor scores above every descriptor of another class.
    pub matched_over_mismatched: f64,
}

/// Image→descriptor retrieval among the given pairs.
pub fn retrieval_accuracy(model: &AlignmentModel, pairs: &[AlignmentPair]) -> Result<RetrievalReport> {
    if pairs.is_empty() {
        return Err(input("retrieval needs at least one pair"));
    }
    let ie = model.encode_images(&pairs.iter().map(|p| &p.0).collect::<Vec<_>>())?;
    let de = model.encode_descriptors(&pairs.iter().map(|p| &p.1).collect::<Vec<_>>())?;
    let n = pairs.len();
    let (mut class_hits, mut inst_hits, mut pair_hits) = (0, 0, 0);
    for i in 0..n {
        let sims: Vec<f64> = de.iter().map(|d| ie[i].cosine(d)).collect();
        let best = (0..n).fold(0, |b, j| if sims[j] > sims[b] { j } else { b });
        let key = pairs[i].1.class_key();
        class_hits += (pairs[best].1.class_key() == key) as usize;
        inst_hits += (best == i) as usize;
        pair_hits += (0..n).filter(|&j| pairs[j].1.class_key() != key).all(|j| sims[i] > sims[j]) as usize;
    }
    let f = |c: usize| c as f64 / n as f64;
    Ok(RetrievalReport { pairs: n, class_top1: f(class_hits), instance_top1: f(inst_hits), matched_over_mismatched: f(pair_hits) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::normalized(v.to_vec()).unwrap()
    }

    #[test]
    fn loss_of_single_pair_is_zero() {
        for cfg in [ContrastiveConfig::default(), ContrastiveConfig::strict()] {
            assert_eq!(contrastive_loss(&[emb(&[1.0, 2.0])], &[emb(&[-3.0, 0.5])], cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn equal_cosines_give_log_n() {
        // Same vector everywhere: every cosine is 1.
        let a = vec![emb(&[0.3, 0.4, 0.5]); 5];
        for cfg in [ContrastiveConfig::default(), ContrastiveConfig::strict(), ContrastiveConfig { symmetric: false, ..ContrastiveConfig::strict() }] {
            let l = contrastive_loss(&a, &a, cfg).unwrap();
            assert!((l - 5f64.ln()).abs() < 1e-12, "{l}");
        }
    }

    #[test]
    fn random_batch_matches_direct_evaluation() {
        let mut r = rng::seeded(4);
        let mk = |r: &mut rng::Rng| emb(&(0..6).map(|_| rng::standard_normal(r)).collect::<Vec<_>>());
        let a: Vec<Embedding> = (0..4).map(|_| mk(&mut r)).collect();
        let b: Vec<Embedding> = (0..4).map(|_| mk(&mut r)).collect();
        let tau = 0.5;
        let cos = |x: &Embedding, y: &Embedding| {
            let dot: f64 = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| p * q).sum();
            dot / (x.norm() * y.norm())
        };
        let mut i2d = 0.0;
        let mut d2i = 0.0;
        for i in 0..4 {
            let num = (cos(&a[i], &b[i]) / tau).exp();
            let den: f64 = (0..4).map(|j| (cos(&a[i], &b[j]) / tau).exp()).sum();
            i2d -= (num / den).ln();
            let den2: f64 = (0..4).map(|j| (cos(&a[j], &b[i]) / tau).exp()).sum();
            d2i -= (num / den2).ln();
        }
        let want = 0.5 * (i2d + d2i) / 4.0;
        let got = contrastive_loss(&a, &b, ContrastiveConfig { temperature: tau, symmetric: true }).unwrap();
        assert!((got - want).abs() < 1e-12);
        let one_way = contrastive_loss(&a, &b, ContrastiveConfig { temperature: tau, symmetric: false }).unwrap();
        assert!((one_way - i2d / 4.0).abs() < 1e-12);
        assert!(contrastive_loss(&a, &b[..3], ContrastiveConfig::default()).is_err());
        assert!(contrastive_loss(&[], &[], ContrastiveConfig::default()).is_err());
    }

    #[test]
    fn attention_special_cases_and_hand_example() {
        let v = vec![vec![2.0, -1.0]];
        let out = cross_attention(&[vec![1.0, 5.0], vec![-3.0, 0.0]], &[vec![0.2, 0.1]], &v, 2).unwrap();
        assert_eq!(out, vec![v[0].clone(), v[0].clone()]);
        let k = vec![vec![1.0, 1.0]; 3];
        let vv = vec![vec![1.0], vec![2.0], vec![6.0]];
        let out = cross_attention(&[vec![0.7, -0.2]], &k, &vv, 2).unwrap();
        assert!((out[0][0] - 3.0).abs() < 1e-12);
        // Two queries × three keys, d = 1, worked by hand:
        // q₀ = 1: scores (1, 0, −1) → weights e^{1}, e^{0}, e^{−1} over their sum.
        let q = vec![vec![1.0], vec![0.0]];
        let k = vec![vec![1.0], vec![0.0], vec![-1.0]];
        let v = vec![vec![1.0], vec![2.0], vec![3.0]];
        let out = cross_attention(&q, &k, &v, 1).unwrap();
        let e = std::f64::consts::E;
        let z = e + 1.0 + 1.0 / e;
        assert!((out[0][0] - (e + 2.0 + 3.0 / e) / z).abs() < 1e-12);
        assert!((out[1][0] - 2.0).abs() < 1e-12);
        assert!(cross_attention(&q, &k, &v[..2], 1).is_err());
        assert!(cross_attention(&q, &k, &v, 2).is_err());
    }

    #[test]
    fn graph_attention_matches_plain_rows() {
        let mut r = rng::seeded(8);
        let mut rows = |n: usize, d: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..d).map(|_| rng::standard_normal(&mut r)).collect()).collect()
        };
        let (q, k, v) = (rows(2, 3), rows(3, 3), rows(3, 4));
        let want = cross_attention(&q, &k, &v, 3).unwrap();
        let mut g = Graph::<f64>::new();
        let flat = |m: &Vec<Vec<f64>>| m.iter().flatten().copied().collect::<Vec<_>>();
        let qv = g.constant(Tensor::new(vec![1, 2, 3], flat(&q)));
        let kv = g.constant(Tensor::new(vec![1, 3, 3], flat(&k)));
        let vv = g.constant(Tensor::new(vec![1, 3, 4], flat(&v)));
        let o = g.attention(qv, kv, vv, vec![3]);
        for (a, b) in g.value(o).data().iter().zip(want.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn attention_output_is_convex_combination(
            q in proptest::collection::vec(-3.0..3.0f64, 2),
            keys in proptest::collection::vec(proptest::collection::vec(-3.0..3.0f64, 2), 1..6),
            vals in proptest::collection::vec(-5.0..5.0f64, 6),
        ) {
            let v: Vec<Vec<f64>> = vals[..keys.len()].iter().map(|&x| vec![x]).collect();
            let out = cross_attention(&[q], &keys, &v, 2).unwrap();
            let lo = v.iter().map(|r| r[0]).fold(f64::INFINITY, f64::min);
            let hi = v.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out[0][0] >= lo - 1e-12 && out[0][0] <= hi + 1e-12);
            // Weights recovered from a one-hot V sum to one.
            let eye: Vec<Vec<f64>> = (0..keys.len()).map(|i| (0..keys.len()).map(|j| (i == j) as u8 as f64).collect()).collect();
            let w = cross_attention(&[vec![0.5, -0.5]], &keys, &eye, 2).unwrap();
            prop_assert!((w[0].iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn contrastive_loss_is_non_negative(seed in 0u64..500, n in 1usize..6) {
            let mut r = rng::seeded(seed);
            let mut mk = || emb(&(0..4).map(|_| rng::standard_normal(&mut r)).collect::<Vec<_>>());
            let a: Vec<Embedding> = (0..n).map(|_| mk()).collect();
            let b: Vec<Embedding> = (0..n).map(|_| mk()).collect();
            prop_assert!(contrastive_loss(&a, &b, ContrastiveConfig::default()).unwrap() >= 0.0);
        }
    }

    #[test]
    fn context_tokens_layout() {
        let e = emb(&[1.0; EMBED_DIM]);
        let mut roi = [0.0; ROI_TOKEN_LEN];
        roi[0] = 1.0;
        let ctx = SemanticContext { embedding: Some(e.clone()), roi_tokens: vec![roi] };
        let t = ctx.tokens().unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(&t[0][..EMBED_DIM], e.as_slice());
        assert!(t[0][EMBED_DIM..].iter().all(|&x| x == 0.0));
        assert_eq!(t[1][EMBED_DIM], 1.0);
        assert!(SemanticContext::from_embedding(emb(&[1.0, 0.0])).tokens().is_err());
        assert!(SemanticContext::default().tokens().unwrap().is_empty());
    }
}
