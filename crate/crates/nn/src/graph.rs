//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node holding its forward value; `backward` walks the
//! tape in reverse and accumulates gradients for nodes that depend on a
//! parameter. Activations use NCHW layout; token sequences are `[N, L, D]`.

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<E> {
    Leaf,
    Param,
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    ChannelBias { x: Var, b: Var },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, xhat: Vec<E>, inv_std: Vec<E> },
    Silu(Var),
    Upsample2x(Var),
    Concat(Var, Var),
    GlobalAvgPool(Var),
    L2Normalize(Var),
    ToTokens(Var),
    FromTokens(Var),
    Reshape(Var),
    Attention { q: Var, k: Var, v: Var, valid: Vec<usize>, probs: Vec<E> },
    MatmulNT(Var, Var),
    Scale(Var, E),
    Transpose(Var),
    CrossEntropyDiag { logits: Var, probs: Vec<E> },
    AffinePerSample { x: Var, scale: Vec<E> },
    L1Loss { pred: Var, target: Vec<E> },
    L2Loss { pred: Var, target: Vec<E> },
}

struct Node<E> {
    value: Tensor<E>,
    needs_grad: bool,
    op: Op<E>,
}

pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
    params: Vec<Option<Var>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims4(s: &[usize]) -> (usize, usize, usize, usize) {
    match *s {
        [n, c, h, w] => (n, c, h, w),
        _ => panic!("expected NCHW tensor, got {s:?}"),
    }
}

fn dims2(s: &[usize]) -> (usize, usize) {
    match *s {
        [r, c] => (r, c),
        _ => panic!("expected matrix, got {s:?}"),
    }
}

fn dims3(s: &[usize]) -> (usize, usize, usize) {
    match *s {
        [a, b, c] => (a, b, c),
        _ => panic!("expected rank-3 tensor, got {s:?}"),
    }
}

/// SiLU derivative is treated as zero below this input: it is under
/// `1e-11` there, and keeping it fills the backward pass with subnormals.
const SILU_GRAD_FLOOR: f64 = -30.0;

const GROUP_NORM_EPS: f64 = 1e-5;

fn sigmoid<E: Element>(x: E) -> E {
    E::ONE / (E::ONE + (-x).exp())
}

/// Geometry of one convolution.
#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    /// Output columns `ox` whose input column `ox·stride + kj − pad` is in range.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = (self.pad.saturating_sub(kj)).div_ceil(self.stride);
        let hi = if self.w + self.pad > kj { (self.w + self.pad - kj - 1) / self.stride + 1 } else { 0 };
        (lo.min(self.ow), hi.min(self.ow).max(lo.min(self.ow)))
    }
}

/// Samples per unfolded GEMM block, targeting about 4096 output columns.
fn chunk_samples(plane: usize, n: usize) -> usize {
    (4096 / plane.max(1)).clamp(1, n.max(1))
}

/// Unfolds one sample into rows of `cols` spaced `row_stride` apart.
fn im2col<E: Element>(x: &[E], g: ConvGeom, cols: &mut [E], row_stride: usize) {
    let ConvGeom { c, h, w, k, stride, pad, oh, ow } = g;
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let (lo, hi) = g.valid_cols(kj);
                let dst = &mut cols[row * row_stride..row * row_stride + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out.fill(E::ZERO);
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    out[..lo].fill(E::ZERO);
                    out[hi..].fill(E::ZERO);
                    if hi > lo {
                        let first = lo * stride + kj - pad;
                        if stride == 1 {
                            out[lo..hi].copy_from_slice(&srow[first..first + hi - lo]);
                        } else {
                            for (j, o) in out[lo..hi].iter_mut().enumerate() {
                                *o = srow[first + j * stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Writes the transpose of row-major `src` (`rows × cols`) into `dst`.
fn transpose_into<E: Element>(src: &[E], rows: usize, cols: usize, dst: &mut [E]) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates unfolded rows back into `dx`.
fn col2im<E: Element>(cols: &[E], g: ConvGeom, row_stride: usize, dx: &mut [E]) {
    let ConvGeom { c, h, w, k, stride, pad, oh, ow } = g;
    for ci in 0..c {
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let (lo, hi) = g.valid_cols(kj);
                if hi <= lo {
                    continue;
                }
                let src = &cols[row * row_stride..row * row_stride + oh * ow];
                let first = lo * stride + kj - pad;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * ow + lo..oy * ow + hi];
                    if stride == 1 {
                        for (d, &v) in drow[first..first + hi - lo].iter_mut().zip(srow) {
                            *d += v;
                        }
                    } else {
                        for (j, &v) in srow.iter().enumerate() {
                            drow[first + j * stride] += v;
                        }
                    }
                }
            }
        }
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new() }
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    /// Parameter leaf; repeated calls for the same id share one node.
    pub fn param(&mut self, store: &ParamStore<E>, id: ParamId) -> Var {
        if let Some(Some(v)) = self.params.get(id.index()) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, &[]);
        if self.params.len() <= id.index() {
            self.params.resize(id.index() + 1, None);
        }
        self.params[id.index()] = Some(v);
        v
    }

    /// Zero-padded 2-D convolution: `x [N,C,H,W]`, `w [O,C,k,k]`, `b [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (n, c, h, wd) = dims4(self.shape(x));
        let (o, cw, k, k2) = dims4(self.shape(w));
        assert!(cw == c && k == k2 && stride >= 1, "conv2d: input {c} channels, weight {:?}", self.shape(w));
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d: kernel larger than padded input");
        assert_eq!(self.shape(b), &[o], "conv2d bias");
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let plane = oh * ow;
        let ckk = c * k * k;
        let geom = ConvGeom { c, h, w: wd, k, stride, pad, oh, ow };
        let per = chunk_samples(plane, n);
        let mut cols = vec![E::ZERO; ckk * per * plane];
        let mut tmp = vec![E::ZERO; o * per * plane];
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![E::ZERO; n * o * plane];
        for s0 in (0..n).step_by(per) {
            let cs = per.min(n - s0);
            let wide = cs * plane;
            for j in 0..cs {
                let s = s0 + j;
                im2col(&xv[s * c * h * wd..(s + 1) * c * h * wd], geom, &mut cols[j * plane..], wide);
            }
            gemm(o, ckk, wide, wv, false, &cols, false, E::ZERO, &mut tmp);
            for j in 0..cs {
                for oc in 0..o {
                    let bias = bv[oc];
                    let src = &tmp[oc * wide + j * plane..oc * wide + (j + 1) * plane];
                    let dst = &mut out[((s0 + j) * o + oc) * plane..((s0 + j) * o + oc + 1) * plane];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = v + bias;
                    }
                }
            }
        }
        self.push(Tensor::new(vec![n, o, oh, ow], out), Op::Conv2d { x, w, b, stride, pad }, &[x, w, b])
    }

    /// `x [R,I]·wᵀ + b` with `w [O,I]`, `b [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (r, i) = dims2(self.shape(x));
        let (o, wi) = dims2(self.shape(w));
        assert_eq!(i, wi, "linear: input width {i}, weight {:?}", self.shape(w));
        assert_eq!(self.shape(b), &[o], "linear bias");
        let mut out = vec![E::ZERO; r * o];
        let bv = self.value(b).data();
        for row in out.chunks_mut(o) {
            row.copy_from_slice(bv);
        }
        gemm(r, i, o, self.value(x).data(), false, self.value(w).data(), true, E::ONE, &mut out);
        self.push(Tensor::new(vec![r, o], out), Op::Linear { x, w, b }, &[x, w, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p + q).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data), Op::Add(a, b), &[a, b])
    }

    /// Adds a per-sample, per-channel bias `b [N,C]` to `x [N,C,H,W]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Var {
        let (n, c, h, w) = dims4(self.shape(x));
        assert_eq!(self.shape(b), &[n, c], "channel_bias");
        let bv = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for (i, plane) in data.chunks_mut(h * w).enumerate() {
            let add = bv[i];
            plane.iter_mut().for_each(|v| *v += add);
        }
        self.push(Tensor::new(vec![n, c, h, w], data), Op::ChannelBias { x, b }, &[x, b])
    }

    /// Normalizes each of `groups` channel groups per sample to zero mean and
    /// unit variance, then applies the per-channel affine `gamma`, `beta`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let (n, c, h, w) = dims4(self.shape(x));
        assert!(groups > 0 && c % groups == 0, "group_norm: {c} channels in {groups} groups");
        assert_eq!(self.shape(gamma), &[c], "group_norm gamma");
        assert_eq!(self.shape(beta), &[c], "group_norm beta");
        let span = c / groups * h * w;
        let eps = E::from_f64(GROUP_NORM_EPS);
        let inv_n = E::from_f64(1.0 / span as f64);
        let mut xhat = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(n * groups);
        for chunk in xhat.chunks_mut(span) {
            let mean = chunk.iter().copied().sum::<E>() * inv_n;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv_n;
            let is = E::ONE / (var + eps).sqrt();
            chunk.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut data = xhat.clone();
        for (i, plane) in data.chunks_mut(h * w).enumerate() {
            let (gc, bc) = (gv[i % c], bv[i % c]);
            plane.iter_mut().for_each(|v| *v = *v * gc + bc);
        }
        let op = Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std };
        self.push(Tensor::new(vec![n, c, h, w], data), op, &[x, gamma, beta])
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| v * sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, data), Op::Silu(x), &[x])
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.shape(x));
        let xv = self.value(x).data();
        let mut out = vec![E::ZERO; n * c * 4 * h * w];
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        self.push(Tensor::new(vec![n, c, 2 * h, 2 * w], out), Op::Upsample2x(x), &[x])
    }

    /// Channel concatenation of two NCHW tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (n, ca, h, w) = dims4(self.shape(a));
        let (nb, cb, hb, wb) = dims4(self.shape(b));
        assert!(n == nb && h == hb && w == wb, "concat: spatial mismatch");
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * h * w);
        for s in 0..n {
            out.extend_from_slice(&av[s * ca * h * w..(s + 1) * ca * h * w]);
            out.extend_from_slice(&bv[s * cb * h * w..(s + 1) * cb * h * w]);
        }
        self.push(Tensor::new(vec![n, ca + cb, h, w], out), Op::Concat(a, b), &[a, b])
    }

    /// Spatial mean, `[N,C,H,W] → [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.shape(x));
        let inv = E::from_f64(1.0 / (h * w) as f64);
        let data = self.value(x).data().chunks(h * w).map(|p| p.iter().copied().sum::<E>() * inv).collect();
        self.push(Tensor::new(vec![n, c], data), Op::GlobalAvgPool(x), &[x])
    }

    /// Row-wise division by the Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let (r, d) = dims2(self.shape(x));
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(d) {
            let norm = row_norm(row);
            row.iter_mut().for_each(|v| *v = *v / norm);
        }
        self.push(Tensor::new(vec![r, d], data), Op::L2Normalize(x), &[x])
    }

    /// `[N,C,H,W] → [N, H·W, C]`.
    pub fn to_tokens(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.shape(x));
        let l = h * w;
        let xv = self.value(x).data();
        let mut out = vec![E::ZERO; n * l * c];
        for s in 0..n {
            for ch in 0..c {
                for p in 0..l {
                    out[(s * l + p) * c + ch] = xv[(s * c + ch) * l + p];
                }
            }
        }
        self.push(Tensor::new(vec![n, l, c], out), Op::ToTokens(x), &[x])
    }

    /// `[N, H·W, C] → [N,C,H,W]`.
    pub fn from_tokens(&mut self, x: Var, h: usize, w: usize) -> Var {
        let (n, l, c) = dims3(self.shape(x));
        assert_eq!(l, h * w, "from_tokens: {l} tokens for {h}×{w}");
        let xv = self.value(x).data();
        let mut out = vec![E::ZERO; n * l * c];
        for s in 0..n {
            for ch in 0..c {
                for p in 0..l {
                    out[(s * c + ch) * l + p] = xv[(s * l + p) * c + ch];
                }
            }
        }
        self.push(Tensor::new(vec![n, c, h, w], out), Op::FromTokens(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        self.push(t, Op::Reshape(x), &[x])
    }

    /// Batched `softmax(QKᵀ/√d)·V` with `q [B,L,d]`, `k [B,M,d]`,
    /// `v [B,M,dv]`. Only the first `valid[b]` keys of batch `b` take part;
    /// a batch entry with no valid keys yields zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, valid: Vec<usize>) -> Var {
        let (b, l, d) = dims3(self.shape(q));
        let (bk, m, dk) = dims3(self.shape(k));
        let (bv, mv, dv) = dims3(self.shape(v));
        assert!(b == bk && b == bv && d == dk && m == mv && valid.len() == b, "attention: shape mismatch");
        assert!(valid.iter().all(|&c| c <= m), "attention: valid count exceeds key count");
        let scale = E::from_f64(1.0 / (d as f64).sqrt());
        let mut probs = vec![E::ZERO; b * l * m];
        let mut out = vec![E::ZERO; b * l * dv];
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        for s in 0..b {
            let cnt = valid[s];
            if cnt == 0 {
                continue;
            }
            let mut scores = vec![E::ZERO; l * cnt];
            gemm(l, d, cnt, &qv[s * l * d..], false, &kv[s * m * d..], true, E::ZERO, &mut scores);
            let p = &mut probs[s * l * m..(s + 1) * l * m];
            for i in 0..l {
                let row = &scores[i * cnt..(i + 1) * cnt];
                let mx = row.iter().fold(row[0], |a, &x| if x > a { x } else { a });
                let mut z = E::ZERO;
                for j in 0..cnt {
                    let e = ((row[j] - mx) * scale).exp();
                    p[i * m + j] = e;
                    z += e;
                }
                for j in 0..cnt {
                    p[i * m + j] = p[i * m + j] / z;
                }
            }
            // P is stored with row stride m; only the first cnt columns are live.
            let mut pc = vec![E::ZERO; l * cnt];
            for i in 0..l {
                pc[i * cnt..(i + 1) * cnt].copy_from_slice(&p[i * m..i * m + cnt]);
            }
            gemm(l, cnt, dv, &pc, false, &vv[s * m * dv..], false, E::ZERO, &mut out[s * l * dv..(s + 1) * l * dv]);
        }
        self.push(Tensor::new(vec![b, l, dv], out), Op::Attention { q, k, v, valid, probs }, &[q, k, v])
    }

    /// `a [N,D]·bᵀ` with `b [M,D]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (n, d) = dims2(self.shape(a));
        let (m, db) = dims2(self.shape(b));
        assert_eq!(d, db, "matmul_nt: inner dimension");
        let mut out = vec![E::ZERO; n * m];
        gemm(n, d, m, self.value(a).data(), false, self.value(b).data(), true, E::ZERO, &mut out);
        self.push(Tensor::new(vec![n, m], out), Op::MatmulNT(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = E::from_f64(s);
        let data = self.value(x).data().iter().map(|&v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, data), Op::Scale(x, s), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = dims2(self.shape(x));
        let xv = self.value(x).data();
        let mut out = vec![E::ZERO; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        self.push(Tensor::new(vec![c, r], out), Op::Transpose(x), &[x])
    }

    /// Mean over rows of `−log softmax(row i)[i]` for square logits.
    pub fn cross_entropy_diag(&mut self, logits: Var) -> Var {
        let (n, m) = dims2(self.shape(logits));
        assert_eq!(n, m, "cross_entropy_diag needs square logits");
        let lv = self.value(logits).data();
        let mut probs = vec![E::ZERO; n * n];
        let mut total = 0.0;
        for i in 0..n {
            let row = &lv[i * n..(i + 1) * n];
            let mx = row.iter().fold(row[0], |a, &x| if x > a { x } else { a });
            let z: f64 = row.iter().map(|&x| (x - mx).to_f64().exp()).sum();
            for j in 0..n {
                probs[i * n + j] = E::from_f64((row[j] - mx).to_f64().exp() / z);
            }
            total += z.ln() - (row[i] - mx).to_f64();
        }
        let value = Tensor::new(vec![], vec![E::from_f64(total / n as f64)]);
        self.push(value, Op::CrossEntropyDiag { logits, probs }, &[logits])
    }

    /// `offset + scale[n]·x[n]` per leading-axis sample; `offset` is constant.
    pub fn affine_per_sample(&mut self, x: Var, scale: Vec<E>, offset: &Tensor<E>) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(offset.shape(), &shape[..], "affine_per_sample offset");
        assert_eq!(scale.len(), shape[0], "affine_per_sample scale");
        let per = self.value(x).len() / shape[0].max(1);
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(offset.data())
            .enumerate()
            .map(|(i, (&v, &o))| o + scale[i / per] * v)
            .collect();
        self.push(Tensor::new(shape, data), Op::AffinePerSample { x, scale }, &[x])
    }

    /// Mean absolute deviation from a constant target.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<E>) -> Var {
        assert_eq!(self.shape(pred), target.shape(), "l1_loss shape");
        let n = target.len() as f64;
        let s: f64 = self.value(pred).data().iter().zip(target.data()).map(|(&p, &t)| (p - t).to_f64().abs()).sum();
        let v = Tensor::new(vec![], vec![E::from_f64(s / n)]);
        self.push(v, Op::L1Loss { pred, target: target.data().to_vec() }, &[pred])
    }

    /// Mean squared deviation from a constant target.
    pub fn l2_loss(&mut self, pred: Var, target: &Tensor<E>) -> Var {
        assert_eq!(self.shape(pred), target.shape(), "l2_loss shape");
        let n = target.len() as f64;
        let s: f64 = self.value(pred).data().iter().zip(target.data()).map(|(&p, &t)| (p - t).to_f64().powi(2)).sum();
        let v = Tensor::new(vec![], vec![E::from_f64(s / n)]);
        self.push(v, Op::L2Loss { pred, target: target.data().to_vec() }, &[pred])
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients<E> {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Vec<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![E::ONE]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.backprop(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop(&self, node: &Node<E>, g: &[E], grads: &mut [Option<Vec<E>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].needs_grad;
        macro_rules! acc {
            ($v:expr) => {
                grad_slot(grads, nodes, $v)
            };
        }
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::Conv2d { x, w, b, stride, pad } => {
                let (n, c, h, wd) = dims4(self.shape(x));
                let (o, _, k, _) = dims4(self.shape(w));
                let (_, _, oh, ow) = dims4(node.value.shape());
                let geom = ConvGeom { c, h, w: wd, k, stride, pad, oh, ow };
                let plane = oh * ow;
                let ckk = c * k * k;
                let per = chunk_samples(plane, n);
                let mut gw = vec![E::ZERO; o * per * plane];
                let mut cols = vec![E::ZERO; ckk * per * plane];
                let mut dw = if wants(w) { vec![E::ZERO; o * ckk] } else { Vec::new() };
                let (mut cols_t, mut gw_t) = if wants(w) {
                    (vec![E::ZERO; ckk * per * plane], vec![E::ZERO; o * per * plane])
                } else {
                    (Vec::new(), Vec::new())
                };
                let xv = self.value(x).data();
                let wv = self.value(w).data();
                for s0 in (0..n).step_by(per) {
                    let cs = per.min(n - s0);
                    let wide = cs * plane;
                    // Gradient regrouped as [O, cs·plane].
                    for j in 0..cs {
                        for oc in 0..o {
                            gw[oc * wide + j * plane..oc * wide + (j + 1) * plane]
                                .copy_from_slice(&g[((s0 + j) * o + oc) * plane..((s0 + j) * o + oc + 1) * plane]);
                        }
                    }
                    if wants(b) {
                        let db = acc!(b);
                        for (oc, row) in gw[..o * wide].chunks(wide).enumerate() {
                            db[oc] += row.iter().copied().sum::<E>();
                        }
                    }
                    if wants(w) {
                        for j in 0..cs {
                            let s = s0 + j;
                            im2col(&xv[s * c * h * wd..(s + 1) * c * h * wd], geom, &mut cols[j * plane..], wide);
                        }
                        transpose_into(&cols[..ckk * wide], ckk, wide, &mut cols_t);
                        transpose_into(&gw[..o * wide], o, wide, &mut gw_t);
                        gemm(o, wide, ckk, &gw_t, true, &cols_t, false, E::ONE, &mut dw);
                    }
                    if wants(x) {
                        gemm(ckk, o, wide, wv, true, &gw, false, E::ZERO, &mut cols);
                        let dx = acc!(x);
                        for j in 0..cs {
                            let s = s0 + j;
                            col2im(&cols[j * plane..], geom, wide, &mut dx[s * c * h * wd..(s + 1) * c * h * wd]);
                        }
                    }
                }
                if wants(w) {
                    add_into(acc!(w), &dw);
                }
            }
            &Op::Linear { x, w, b } => {
                let (r, i) = dims2(self.shape(x));
                let o = self.shape(w)[0];
                if wants(x) {
                    gemm(r, o, i, g, false, self.value(w).data(), false, E::ONE, acc!(x));
                }
                if wants(w) {
                    gemm(o, r, i, g, true, self.value(x).data(), false, E::ONE, acc!(w));
                }
                if wants(b) {
                    let db = acc!(b);
                    for row in g.chunks(o) {
                        add_into(db, row);
                    }
                }
            }
            &Op::Add(a, b) => {
                if wants(a) {
                    add_into(acc!(a), g);
                }
                if wants(b) {
                    add_into(acc!(b), g);
                }
            }
            &Op::ChannelBias { x, b } => {
                let (_, _, h, w) = dims4(self.shape(x));
                if wants(x) {
                    add_into(acc!(x), g);
                }
                if wants(b) {
                    let db = acc!(b);
                    for (i, plane) in g.chunks(h * w).enumerate() {
                        db[i] += plane.iter().copied().sum::<E>();
                    }
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let (_, c, h, w) = dims4(self.shape(x));
                let plane = h * w;
                if wants(gamma) || wants(beta) {
                    let mut dg = vec![E::ZERO; c];
                    let mut db = vec![E::ZERO; c];
                    for (i, (gp, xp)) in g.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                        dg[i % c] += gp.iter().zip(xp).map(|(&a, &b)| a * b).sum::<E>();
                        db[i % c] += gp.iter().copied().sum::<E>();
                    }
                    if wants(gamma) {
                        add_into(acc!(gamma), &dg);
                    }
                    if wants(beta) {
                        add_into(acc!(beta), &db);
                    }
                }
                if wants(x) {
                    let gv = self.value(gamma).data().to_vec();
                    let span = c / groups * plane;
                    let inv_n = E::from_f64(1.0 / span as f64);
                    let dx = acc!(x);
                    for (k, ((dxc, gc), xc)) in dx.chunks_mut(span).zip(g.chunks(span)).zip(xhat.chunks(span)).enumerate() {
                        let c0 = (k % groups) * (c / groups);
                        let dy = |j: usize| gc[j] * gv[c0 + j / plane];
                        let (mut m1, mut m2) = (E::ZERO, E::ZERO);
                        for j in 0..span {
                            let d = dy(j);
                            m1 += d;
                            m2 += d * xc[j];
                        }
                        let (m1, m2) = (m1 * inv_n, m2 * inv_n);
                        let is = inv_std[k];
                        for j in 0..span {
                            dxc[j] += is * (dy(j) - m1 - xc[j] * m2);
                        }
                    }
                }
            }
            &Op::Silu(x) => {
                let dx = acc!(x);
                let floor = E::from_f64(SILU_GRAD_FLOOR);
                for ((d, &xv), &gv) in dx.iter_mut().zip(self.value(x).data()).zip(g) {
                    if xv < floor {
                        continue;
                    }
                    let s = sigmoid(xv);
                    *d += gv * s * (E::ONE + xv * (E::ONE - s));
                }
            }
            &Op::Upsample2x(x) => {
                let (n, c, h, w) = dims4(self.shape(x));
                let dx = acc!(x);
                for p in 0..n * c {
                    let src = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
                        }
                    }
                }
            }
            &Op::Concat(a, b) => {
                let (n, ca, h, w) = dims4(self.shape(a));
                let cb = self.shape(b)[1];
                let (sa, sb) = (ca * h * w, cb * h * w);
                if wants(a) {
                    let da = acc!(a);
                    for s in 0..n {
                        add_into(&mut da[s * sa..(s + 1) * sa], &g[s * (sa + sb)..s * (sa + sb) + sa]);
                    }
                }
                if wants(b) {
                    let db = acc!(b);
                    for s in 0..n {
                        add_into(&mut db[s * sb..(s + 1) * sb], &g[s * (sa + sb) + sa..(s + 1) * (sa + sb)]);
                    }
                }
            }
            &Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = dims4(self.shape(x));
                let inv = E::from_f64(1.0 / (h * w) as f64);
                let dx = acc!(x);
                for (plane, &gv) in dx.chunks_mut(h * w).zip(g) {
                    plane.iter_mut().for_each(|d| *d += gv * inv);
                }
            }
            &Op::L2Normalize(x) => {
                let (_, d) = dims2(self.shape(x));
                let dx = acc!(x);
                for ((xr, yr), (gr, dr)) in self
                    .value(x)
                    .data()
                    .chunks(d)
                    .zip(node.value.data().chunks(d))
                    .zip(g.chunks(d).zip(dx.chunks_mut(d)))
                {
                    let norm = row_norm(xr);
                    let dot: E = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        dr[j] += (gr[j] - yr[j] * dot) / norm;
                    }
                }
            }
            &Op::ToTokens(x) => {
                let (n, c, h, w) = dims4(self.shape(x));
                let l = h * w;
                let dx = acc!(x);
                for s in 0..n {
                    for ch in 0..c {
                        for p in 0..l {
                            dx[(s * c + ch) * l + p] += g[(s * l + p) * c + ch];
                        }
                    }
                }
            }
            &Op::FromTokens(x) => {
                let (n, l, c) = dims3(self.shape(x));
                let dx = acc!(x);
                for s in 0..n {
                    for ch in 0..c {
                        for p in 0..l {
                            dx[(s * l + p) * c + ch] += g[(s * c + ch) * l + p];
                        }
                    }
                }
            }
            &Op::Reshape(x) => add_into(acc!(x), g),
            Op::Attention { q, k, v, valid, probs } => {
                let (q, k, v) = (*q, *k, *v);
                let (b, l, d) = dims3(self.shape(q));
                let (_, m, dv) = dims3(self.shape(v));
                let scale = E::from_f64(1.0 / (d as f64).sqrt());
                let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
                for s in 0..b {
                    let cnt = valid[s];
                    if cnt == 0 {
                        continue;
                    }
                    let gs = &g[s * l * dv..(s + 1) * l * dv];
                    let mut p = vec![E::ZERO; l * cnt];
                    for i in 0..l {
                        p[i * cnt..(i + 1) * cnt].copy_from_slice(&probs[(s * l + i) * m..(s * l + i) * m + cnt]);
                    }
                    if wants(v) {
                        let dvv = acc!(v);
                        gemm(cnt, l, dv, &p, true, gs, false, E::ONE, &mut dvv[s * m * dv..(s * m + cnt) * dv]);
                    }
                    if !(wants(q) || wants(k)) {
                        continue;
                    }
                    let mut dp = vec![E::ZERO; l * cnt];
                    gemm(l, dv, cnt, gs, false, &vv[s * m * dv..], true, E::ZERO, &mut dp);
                    for i in 0..l {
                        let pr = &p[i * cnt..(i + 1) * cnt];
                        let dr = &mut dp[i * cnt..(i + 1) * cnt];
                        let dot: E = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                        for j in 0..cnt {
                            dr[j] = pr[j] * (dr[j] - dot) * scale;
                        }
                    }
                    if wants(q) {
                        let dq = acc!(q);
                        gemm(l, cnt, d, &dp, false, &kv[s * m * d..], false, E::ONE, &mut dq[s * l * d..(s + 1) * l * d]);
                    }
                    if wants(k) {
                        let dk = acc!(k);
                        gemm(cnt, l, d, &dp, true, &qv[s * l * d..], false, E::ONE, &mut dk[s * m * d..(s * m + cnt) * d]);
                    }
                }
            }
            &Op::MatmulNT(a, b) => {
                let (n, d) = dims2(self.shape(a));
                let m = self.shape(b)[0];
                if wants(a) {
                    gemm(n, m, d, g, false, self.value(b).data(), false, E::ONE, acc!(a));
                }
                if wants(b) {
                    gemm(m, n, d, g, true, self.value(a).data(), false, E::ONE, acc!(b));
                }
            }
            &Op::Scale(x, s) => {
                for (d, &gv) in acc!(x).iter_mut().zip(g) {
                    *d += gv * s;
                }
            }
            &Op::Transpose(x) => {
                let (r, c) = dims2(self.shape(x));
                let dx = acc!(x);
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::CrossEntropyDiag { logits, probs } => {
                let n = self.shape(*logits)[0];
                let coef = g[0] / E::from_f64(n as f64);
                let dl = acc!(*logits);
                for i in 0..n {
                    for j in 0..n {
                        let t = if i == j { E::ONE } else { E::ZERO };
                        dl[i * n + j] += coef * (probs[i * n + j] - t);
                    }
                }
            }
            Op::AffinePerSample { x, scale } => {
                let per = g.len() / scale.len().max(1);
                for (i, (d, &gv)) in acc!(*x).iter_mut().zip(g).enumerate() {
                    *d += gv * scale[i / per];
                }
            }
            Op::L1Loss { pred, target } => {
                let coef = g[0] / E::from_f64(target.len() as f64);
                let pv = self.value(*pred).data();
                for ((d, &p), &t) in acc!(*pred).iter_mut().zip(pv).zip(target) {
                    *d += coef * (p - t).sign();
                }
            }
            Op::L2Loss { pred, target } => {
                let coef = g[0] * E::from_f64(2.0 / target.len() as f64);
                let pv = self.value(*pred).data();
                for ((d, &p), &t) in acc!(*pred).iter_mut().zip(pv).zip(target) {
                    *d += coef * (p - t);
                }
            }
        }
    }
}

fn grad_slot<'a, E: Element>(grads: &'a mut [Option<Vec<E>>], nodes: &[Node<E>], v: Var) -> &'a mut Vec<E> {
    let len = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![E::ZERO; len])
}

fn row_norm<E: Element>(row: &[E]) -> E {
    (row.iter().map(|&v| v * v).sum::<E>() + E::from_f64(1e-12)).sqrt()
}

fn add_into<E: Element>(dst: &mut [E], src: &[E]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of a reverse sweep.
pub struct Gradients<E> {
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn of(&self, v: Var) -> Option<&[E]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Parameter gradients in store order; unused parameters get zeros.
    pub fn for_params(&self, graph: &Graph<E>, store: &ParamStore<E>) -> Vec<Vec<E>> {
        store
            .ids()
            .map(|id| match graph.params.get(id.index()).copied().flatten().and_then(|v| self.of(v)) {
                Some(g) => g.to_vec(),
                None => vec![E::ZERO; store.value(id).len()],
            })
            .collect()
    }
}
