//! Encoder-only transformer with curve-conditioned attention masking and a
//! discretized output head, with a hand-written backward pass.
//!
//! Tokens of one sequence are laid out as `n_train` observed `(t, y)` pairs
//! followed by query steps. Every token attends to all observed tokens; a
//! query token additionally attends to itself and to nothing else, so
//! queries never influence each other. There is no positional encoding.
//! Blocks are pre-norm: `x + attn(ln1(x))`, then `x + ffn(ln2(x))`, and a
//! final layer norm feeds a linear head producing one logit per bin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, Layout, Real};
use super::PfnError;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub nlayers: usize,
    pub emsize: usize,
    pub nheads: usize,
    pub nhidden: usize,
    pub nbins: usize,
    /// Longest curve the model handles; steps are encoded as `t / m`.
    pub m: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { nlayers: 6, emsize: 128, nheads: 4, nhidden: 1024, nbins: 1000, m: 100 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), PfnError> {
        if self.nlayers == 0 || self.emsize == 0 || self.nheads == 0 || self.nhidden == 0 {
            return Err(PfnError::InvalidConfig("layer counts and sizes must be positive".into()));
        }
        if self.emsize % self.nheads != 0 {
            return Err(PfnError::InvalidConfig(format!(
                "emsize {} not divisible by nheads {}",
                self.emsize, self.nheads
            )));
        }
        if self.nbins < 2 {
            return Err(PfnError::InvalidConfig("nbins must be >= 2".into()));
        }
        if self.m < 2 {
            return Err(PfnError::InvalidConfig("m must be >= 2".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.emsize / self.nheads
    }

    pub fn num_params(&self) -> usize {
        Offsets::new(self).total
    }

    /// Named tensors in storage order.
    pub fn param_entries(&self) -> Vec<ParamEntry> {
        let (e, f, nb) = (self.emsize, self.nhidden, self.nbins);
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            out.push(ParamEntry { name, shape, offset });
            offset += len;
        };
        push("encoder.t.weight".into(), vec![e]);
        push("encoder.t.bias".into(), vec![e]);
        push("encoder.y.weight".into(), vec![e]);
        push("encoder.y.bias".into(), vec![e]);
        for l in 0..self.nlayers {
            push(format!("layers.{l}.ln1.gain"), vec![e]);
            push(format!("layers.{l}.ln1.bias"), vec![e]);
            push(format!("layers.{l}.attn.qkv.weight"), vec![e, 3 * e]);
            push(format!("layers.{l}.attn.qkv.bias"), vec![3 * e]);
            push(format!("layers.{l}.attn.out.weight"), vec![e, e]);
            push(format!("layers.{l}.attn.out.bias"), vec![e]);
            push(format!("layers.{l}.ln2.gain"), vec![e]);
            push(format!("layers.{l}.ln2.bias"), vec![e]);
            push(format!("layers.{l}.ffn.in.weight"), vec![e, f]);
            push(format!("layers.{l}.ffn.in.bias"), vec![f]);
            push(format!("layers.{l}.ffn.out.weight"), vec![f, e]);
            push(format!("layers.{l}.ffn.out.bias"), vec![e]);
        }
        push("final_ln.gain".into(), vec![e]);
        push("final_ln.bias".into(), vec![e]);
        push("head.weight".into(), vec![e, nb]);
        push("head.bias".into(), vec![nb]);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    wqkv: usize,
    bqkv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Offsets {
    enc_t_w: usize,
    enc_t_b: usize,
    enc_y_w: usize,
    enc_y_b: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Offsets {
    fn new(config: &ModelConfig) -> Self {
        let entries = config.param_entries();
        let mut it = entries.iter().map(|e| e.offset);
        let mut next = || it.next().expect("layout entry");
        let enc_t_w = next();
        let enc_t_b = next();
        let enc_y_w = next();
        let enc_y_b = next();
        let layers = (0..config.nlayers)
            .map(|_| LayerOffsets {
                ln1_g: next(),
                ln1_b: next(),
                wqkv: next(),
                bqkv: next(),
                wo: next(),
                bo: next(),
                ln2_g: next(),
                ln2_b: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            })
            .collect();
        let lnf_g = next();
        let lnf_b = next();
        let head_w = next();
        let head_b = next();
        let last = entries.last().unwrap();
        Self { enc_t_w, enc_t_b, enc_y_w, enc_y_b, layers, lnf_g, lnf_b, head_w, head_b, total: last.offset + last.len() }
    }
}

/// All trainable parameters in one flat buffer, laid out by [`ModelConfig::param_entries`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    data: Vec<T>,
}

impl<T: Real> ModelParams<T> {
    /// Layer-norm gains at one, biases and the output head at zero, other
    /// weights Glorot-uniform.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, PfnError> {
        config.validate()?;
        let mut data = vec![T::zero(); config.num_params()];
        for entry in config.param_entries() {
            let slice = &mut data[entry.range()];
            let name = entry.name.as_str();
            if name.ends_with(".gain") {
                slice.fill(T::one());
            } else if name.ends_with(".bias") || name.starts_with("head.") {
                // zero
            } else {
                let (fan_in, fan_out) = match entry.shape.as_slice() {
                    [n] => (1, *n),
                    [i, o] => (*i, *o),
                    _ => unreachable!("parameters are vectors or matrices"),
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in slice.iter_mut() {
                    *v = T::lit(rng.random_range(-limit..limit));
                }
            }
        }
        Ok(Self { config, data })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, PfnError> {
        config.validate()?;
        Ok(Self { data: vec![T::zero(); config.num_params()], config })
    }

    pub fn from_data(config: ModelConfig, data: Vec<T>) -> Result<Self, PfnError> {
        config.validate()?;
        if data.len() != config.num_params() {
            return Err(PfnError::Shape(format!("expected {} parameters, got {}", config.num_params(), data.len())));
        }
        Ok(Self { config, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.config.param_entries().into_iter().find(|e| e.name == name).map(|e| &self.data[e.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let entry = self.config.param_entries().into_iter().find(|e| e.name == name)?;
        Some(&mut self.data[entry.range()])
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams { config: self.config, data: self.data.iter().map(|v| U::lit(v.f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Token inputs for `batch` sequences of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch<T> {
    pub batch: usize,
    pub n_train: usize,
    pub n_tokens: usize,
    /// `batch x n_tokens` step values already divided by `m`.
    pub t_scaled: Vec<T>,
    /// `batch x n_train` observed values.
    pub y: Vec<T>,
}

impl<T: Real> TokenBatch<T> {
    pub fn validate(&self) -> Result<(), PfnError> {
        if self.n_train > self.n_tokens {
            return Err(PfnError::Shape("more observed tokens than tokens".into()));
        }
        if self.t_scaled.len() != self.batch * self.n_tokens || self.y.len() != self.batch * self.n_train {
            return Err(PfnError::Shape(format!(
                "token buffers do not match batch={} n_tokens={} n_train={}",
                self.batch, self.n_tokens, self.n_train
            )));
        }
        if self.t_scaled.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(PfnError::Shape("non-finite token input".into()));
        }
        Ok(())
    }

    pub fn n_queries(&self) -> usize {
        self.n_tokens - self.n_train
    }

    pub fn rows(&self) -> usize {
        self.batch * self.n_tokens
    }
}

struct LayerCache<T> {
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
    u: Vec<T>,
    th: Vec<T>,
}

/// Activations retained for the backward pass.
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
    lnf_xhat: Vec<T>,
    lnf_rstd: Vec<T>,
    lnf_out: Vec<T>,
    /// `queries x nbins` logits.
    pub logits: Vec<T>,
}

fn layer_norm<T: Real>(x: &[T], width: usize, gain: &[T], bias: &[T], xhat: &mut [T], rstd: &mut [T], out: &mut [T]) {
    let inv_w = T::one() / T::lit(width as f64);
    let eps = T::lit(LN_EPS);
    for (r, row) in x.chunks_exact(width).enumerate() {
        let mean = row.iter().copied().sum::<T>() * inv_w;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_w;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        let xh = &mut xhat[r * width..(r + 1) * width];
        let o = &mut out[r * width..(r + 1) * width];
        for j in 0..width {
            xh[j] = (row[j] - mean) * rs;
            o[j] = xh[j] * gain[j] + bias[j];
        }
    }
}

fn layer_norm_apply<T: Real>(xhat: &[T], width: usize, gain: &[T], bias: &[T], out: &mut [T]) {
    for (xh, o) in xhat.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        for j in 0..width {
            o[j] = xh[j] * gain[j] + bias[j];
        }
    }
}

/// Adds the input gradient into `dx` and accumulates gain/bias gradients.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    width: usize,
    gain: &[T],
    dx: &mut [T],
    dgain: &mut [T],
    dbias: &mut [T],
) {
    let inv_w = T::one() / T::lit(width as f64);
    let mut dxhat = vec![T::zero(); width];
    for (r, (dyr, xh)) in dy.chunks_exact(width).zip(xhat.chunks_exact(width)).enumerate() {
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..width {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
        }
        mean_d *= inv_w;
        mean_dx *= inv_w;
        let rs = rstd[r];
        let dxr = &mut dx[r * width..(r + 1) * width];
        for j in 0..width {
            dxr[j] += rs * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// `tanh` through one `exp`, odd-symmetric and overflow-free.
#[inline(always)]
fn tanh_fast<T: Real>(x: T) -> T {
    let e = (T::lit(-2.0) * x.abs()).exp();
    ((T::one() - e) / (T::one() + e)).copysign(x)
}

/// Inner `tanh` of the GELU approximation.
#[inline(always)]
fn gelu_tanh<T: Real>(u: T) -> T {
    tanh_fast(T::lit(GELU_K) * (u + T::lit(GELU_C) * u * u * u))
}

#[inline(always)]
fn gelu<T: Real>(u: T, th: T) -> T {
    T::lit(0.5) * u * (T::one() + th)
}

#[inline(always)]
fn gelu_grad<T: Real>(u: T, th: T) -> T {
    let half = T::lit(0.5);
    half * (T::one() + th)
        + half * u * (T::one() - th * th) * T::lit(GELU_K) * (T::one() + T::lit(3.0 * GELU_C) * u * u)
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T]) {
    let w = bias.len();
    for row in out.chunks_exact_mut(w) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn bias_grad<T: Real>(dy: &[T], db: &mut [T]) {
    let w = db.len();
    for row in dy.chunks_exact(w) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
}

/// `out = x W + b` with `x: rows x n_in`, `W: n_in x n_out` at `w_off` in `params`.
#[allow(clippy::too_many_arguments)]
fn linear<T: Real>(x: &[T], rows: usize, n_in: usize, n_out: usize, params: &[T], w_off: usize, b_off: usize, out: &mut [T]) {
    gemm(rows, n_in, n_out, T::one(), x, Layout::rows(0, n_in), params, Layout::rows(w_off, n_out), T::zero(), out, Layout::rows(0, n_out));
    add_bias(out, &params[b_off..b_off + n_out]);
}

/// Accumulates `dW += x^T dy`, `db += colsum(dy)` and writes `dx = dy W^T`
/// (added into `dx` when `accumulate_dx`).
#[allow(clippy::too_many_arguments)]
fn linear_backward<T: Real>(
    x: &[T],
    dy: &[T],
    rows: usize,
    n_in: usize,
    n_out: usize,
    params: &[T],
    w_off: usize,
    b_off: usize,
    grads: &mut [T],
    dx: Option<(&mut [T], bool)>,
) {
    gemm(n_in, rows, n_out, T::one(), x, Layout::transposed(0, n_in), dy, Layout::rows(0, n_out), T::one(), grads, Layout::rows(w_off, n_out));
    bias_grad(dy, &mut grads[b_off..b_off + n_out]);
    if let Some((dx, accumulate)) = dx {
        let beta = if accumulate { T::one() } else { T::zero() };
        gemm(rows, n_out, n_in, T::one(), dy, Layout::rows(0, n_out), params, Layout::transposed(w_off, n_out), beta, dx, Layout::rows(0, n_in));
    }
}

struct AttnShape {
    batch: usize,
    n_tokens: usize,
    n_train: usize,
    heads: usize,
    head_dim: usize,
    emsize: usize,
}

impl AttnShape {
    fn probs_stride(&self) -> usize {
        self.n_train + 1
    }

    fn probs_offset(&self, b: usize, h: usize) -> usize {
        (b * self.heads + h) * self.n_tokens * self.probs_stride()
    }

    fn q(&self, b: usize, h: usize) -> Layout {
        Layout::strided(b * self.n_tokens * 3 * self.emsize + h * self.head_dim, 3 * self.emsize)
    }

    fn k(&self, b: usize, h: usize) -> Layout {
        Layout::strided(b * self.n_tokens * 3 * self.emsize + self.emsize + h * self.head_dim, 3 * self.emsize)
    }

    fn v(&self, b: usize, h: usize) -> Layout {
        Layout::strided(b * self.n_tokens * 3 * self.emsize + 2 * self.emsize + h * self.head_dim, 3 * self.emsize)
    }

    fn out(&self, b: usize, h: usize) -> Layout {
        Layout::strided(b * self.n_tokens * self.emsize + h * self.head_dim, self.emsize)
    }

    fn at(&self, l: Layout, i: usize) -> usize {
        l.offset + i * l.row_stride
    }
}

fn attention_forward<T: Real>(s: &AttnShape, qkv: &[T], probs: &mut [T], out: &mut [T]) {
    let (n, nt, dh, np) = (s.n_tokens, s.n_train, s.head_dim, s.probs_stride());
    let scale = T::one() / T::lit(dh as f64).sqrt();
    for b in 0..s.batch {
        for h in 0..s.heads {
            let (lq, lk, lv, lo) = (s.q(b, h), s.k(b, h), s.v(b, h), s.out(b, h));
            let po = s.probs_offset(b, h);
            let lp = Layout::strided(po, np);
            gemm(n, dh, nt, scale, qkv, lq, qkv, lk.t(), T::zero(), probs, lp);
            for i in 0..n {
                let row = &mut probs[po + i * np..po + (i + 1) * np];
                let is_query = i >= nt;
                if is_query {
                    let (qi, ki) = (s.at(lq, i), s.at(lk, i));
                    let dot: T = (0..dh).map(|d| qkv[qi + d] * qkv[ki + d]).sum();
                    row[nt] = dot * scale;
                }
                let active = if is_query { np } else { nt };
                let max = row[..active].iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for v in &mut row[..active] {
                    *v = (*v - max).exp();
                    total += *v;
                }
                for v in &mut row[..active] {
                    *v /= total;
                }
                if !is_query {
                    row[nt] = T::zero();
                }
            }
            gemm(n, nt, dh, T::one(), probs, lp, qkv, lv, T::zero(), out, lo);
            for i in nt..n {
                let p_self = probs[po + i * np + nt];
                let (vi, oi) = (s.at(lv, i), s.at(lo, i));
                for d in 0..dh {
                    out[oi + d] += p_self * qkv[vi + d];
                }
            }
        }
    }
}

/// Writes `d qkv` (fully overwriting it) from `d out`.
fn attention_backward<T: Real>(s: &AttnShape, qkv: &[T], probs: &[T], d_out: &[T], d_qkv: &mut [T]) {
    let (n, nt, dh, np) = (s.n_tokens, s.n_train, s.head_dim, s.probs_stride());
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut ds = vec![T::zero(); n * np];
    for b in 0..s.batch {
        for h in 0..s.heads {
            let (lq, lk, lv, lo) = (s.q(b, h), s.k(b, h), s.v(b, h), s.out(b, h));
            let po = s.probs_offset(b, h);
            let lp = Layout::strided(po, np);
            let lds = Layout::strided(0, np);
            // dP for observed keys.
            gemm(n, dh, nt, T::one(), d_out, lo, qkv, lv.t(), T::zero(), &mut ds, lds);
            for i in 0..n {
                let is_query = i >= nt;
                let prow = &probs[po + i * np..po + (i + 1) * np];
                let drow = &mut ds[i * np..(i + 1) * np];
                if is_query {
                    let (oi, vi) = (s.at(lo, i), s.at(lv, i));
                    drow[nt] = (0..dh).map(|d| d_out[oi + d] * qkv[vi + d]).sum();
                } else {
                    drow[nt] = T::zero();
                }
                let active = if is_query { np } else { nt };
                let dot: T = (0..active).map(|j| prow[j] * drow[j]).sum();
                for j in 0..active {
                    drow[j] = prow[j] * (drow[j] - dot);
                }
            }
            // Observed-key parts; these overwrite their targets.
            gemm(n, nt, dh, scale, &ds, lds, qkv, lk, T::zero(), d_qkv, lq);
            gemm(nt, n, dh, scale, &ds, lds.t(), qkv, lq, T::zero(), d_qkv, lk);
            gemm(nt, n, dh, T::one(), probs, lp.t(), d_out, lo, T::zero(), d_qkv, lv);
            // Self terms of query tokens.
            for i in nt..n {
                let ds_self = ds[i * np + nt] * scale;
                let p_self = probs[po + i * np + nt];
                let (qi, ki, vi, oi) = (s.at(lq, i), s.at(lk, i), s.at(lv, i), s.at(lo, i));
                for d in 0..dh {
                    d_qkv[qi + d] += ds_self * qkv[ki + d];
                    d_qkv[ki + d] = ds_self * qkv[qi + d];
                    d_qkv[vi + d] = p_self * d_out[oi + d];
                }
            }
        }
    }
}

impl<T: Real> ModelParams<T> {
    /// Full forward pass; returns the cache needed by [`ModelParams::backward`].
    pub fn forward_cached(&self, tokens: &TokenBatch<T>) -> Result<ForwardCache<T>, PfnError> {
        tokens.validate()?;
        let cfg = &self.config;
        let off = Offsets::new(cfg);
        let p = &self.data;
        let (e, f) = (cfg.emsize, cfg.nhidden);
        let (nb, n, nt) = (tokens.batch, tokens.n_tokens, tokens.n_train);
        let rows = tokens.rows();
        let shape = AttnShape { batch: nb, n_tokens: n, n_train: nt, heads: cfg.nheads, head_dim: cfg.head_dim(), emsize: e };

        // Token encoder.
        let mut x = vec![T::zero(); rows * e];
        for b in 0..nb {
            for i in 0..n {
                let r = b * n + i;
                let t = tokens.t_scaled[r];
                let xr = &mut x[r * e..(r + 1) * e];
                for j in 0..e {
                    xr[j] = p[off.enc_t_w + j] * t + p[off.enc_t_b + j];
                }
                if i < nt {
                    let y = tokens.y[b * nt + i];
                    for j in 0..e {
                        xr[j] += p[off.enc_y_w + j] * y + p[off.enc_y_b + j];
                    }
                }
            }
        }

        let mut layers = Vec::with_capacity(cfg.nlayers);
        let mut a = vec![T::zero(); rows * e];
        let mut proj = vec![T::zero(); rows * e];
        let mut g = vec![T::zero(); rows * f];
        for lo in &off.layers {
            let mut xhat1 = vec![T::zero(); rows * e];
            let mut rstd1 = vec![T::zero(); rows];
            layer_norm(&x, e, &p[lo.ln1_g..lo.ln1_g + e], &p[lo.ln1_b..lo.ln1_b + e], &mut xhat1, &mut rstd1, &mut a);
            let mut qkv = vec![T::zero(); rows * 3 * e];
            linear(&a, rows, e, 3 * e, p, lo.wqkv, lo.bqkv, &mut qkv);
            let mut probs = vec![T::zero(); nb * cfg.nheads * n * (nt + 1)];
            let mut attn = vec![T::zero(); rows * e];
            attention_forward(&shape, &qkv, &mut probs, &mut attn);
            linear(&attn, rows, e, e, p, lo.wo, lo.bo, &mut proj);
            for (xv, &pv) in x.iter_mut().zip(&proj) {
                *xv += pv;
            }

            let mut xhat2 = vec![T::zero(); rows * e];
            let mut rstd2 = vec![T::zero(); rows];
            layer_norm(&x, e, &p[lo.ln2_g..lo.ln2_g + e], &p[lo.ln2_b..lo.ln2_b + e], &mut xhat2, &mut rstd2, &mut a);
            let mut u = vec![T::zero(); rows * f];
            linear(&a, rows, e, f, p, lo.w1, lo.b1, &mut u);
            let th: Vec<T> = u.iter().map(|&uv| gelu_tanh(uv)).collect();
            for ((gv, &uv), &tv) in g.iter_mut().zip(&u).zip(&th) {
                *gv = gelu(uv, tv);
            }
            linear(&g, rows, f, e, p, lo.w2, lo.b2, &mut proj);
            for (xv, &pv) in x.iter_mut().zip(&proj) {
                *xv += pv;
            }
            layers.push(LayerCache { xhat1, rstd1, qkv, probs, attn, xhat2, rstd2, u, th });
        }

        // Head on query rows only.
        let nq = tokens.n_queries();
        let q_rows = nb * nq;
        let mut xq = vec![T::zero(); q_rows * e];
        for b in 0..nb {
            for i in nt..n {
                let src = (b * n + i) * e;
                let dst = (b * nq + i - nt) * e;
                xq[dst..dst + e].copy_from_slice(&x[src..src + e]);
            }
        }
        let mut lnf_xhat = vec![T::zero(); q_rows * e];
        let mut lnf_rstd = vec![T::zero(); q_rows];
        let mut lnf_out = vec![T::zero(); q_rows * e];
        layer_norm(&xq, e, &p[off.lnf_g..off.lnf_g + e], &p[off.lnf_b..off.lnf_b + e], &mut lnf_xhat, &mut lnf_rstd, &mut lnf_out);
        let mut logits = vec![T::zero(); q_rows * cfg.nbins];
        linear(&lnf_out, q_rows, e, cfg.nbins, p, off.head_w, off.head_b, &mut logits);
        Ok(ForwardCache { layers, lnf_xhat, lnf_rstd, lnf_out, logits })
    }

    /// Query-row logits, `batch * n_queries x nbins`.
    pub fn logits(&self, tokens: &TokenBatch<T>) -> Result<Vec<T>, PfnError> {
        Ok(self.forward_cached(tokens)?.logits)
    }

    /// Mean cross-entropy over all query rows against target bins.
    pub fn loss(&self, tokens: &TokenBatch<T>, targets: &[usize]) -> Result<T, PfnError> {
        let cache = self.forward_cached(tokens)?;
        cross_entropy(&cache.logits, targets, self.config.nbins)
    }

    /// Loss and gradient of every parameter, in the flat parameter layout.
    pub fn loss_and_grad(&self, tokens: &TokenBatch<T>, targets: &[usize]) -> Result<(T, Vec<T>), PfnError> {
        let cache = self.forward_cached(tokens)?;
        let loss = cross_entropy(&cache.logits, targets, self.config.nbins)?;
        let grads = self.backward(tokens, targets, &cache)?;
        Ok((loss, grads))
    }

    /// Reverse-mode gradient of the mean cross-entropy for a recorded forward pass.
    pub fn backward(&self, tokens: &TokenBatch<T>, targets: &[usize], cache: &ForwardCache<T>) -> Result<Vec<T>, PfnError> {
        let cfg = &self.config;
        let off = Offsets::new(cfg);
        let p = &self.data;
        let (e, f, nbins) = (cfg.emsize, cfg.nhidden, cfg.nbins);
        let (nb, n, nt) = (tokens.batch, tokens.n_tokens, tokens.n_train);
        let nq = tokens.n_queries();
        let rows = tokens.rows();
        let q_rows = nb * nq;
        if targets.len() != q_rows {
            return Err(PfnError::Shape(format!("expected {q_rows} targets, got {}", targets.len())));
        }
        let shape = AttnShape { batch: nb, n_tokens: n, n_train: nt, heads: cfg.nheads, head_dim: cfg.head_dim(), emsize: e };
        let mut grads = vec![T::zero(); p.len()];

        // Softmax cross-entropy.
        let inv_q = T::one() / T::lit(q_rows.max(1) as f64);
        let mut dlogits = cache.logits.clone();
        for (row, &target) in dlogits.chunks_exact_mut(nbins).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total * inv_q;
            }
            row[target] -= inv_q;
        }

        let mut dlnf = vec![T::zero(); q_rows * e];
        linear_backward(&cache.lnf_out, &dlogits, q_rows, e, nbins, p, off.head_w, off.head_b, &mut grads, Some((&mut dlnf, false)));
        let mut dxq = vec![T::zero(); q_rows * e];
        {
            let (gains, rest) = grads.split_at_mut(off.lnf_b);
            layer_norm_backward(
                &dlnf,
                &cache.lnf_xhat,
                &cache.lnf_rstd,
                e,
                &p[off.lnf_g..off.lnf_g + e],
                &mut dxq,
                &mut gains[off.lnf_g..off.lnf_g + e],
                &mut rest[..e],
            );
        }
        let mut dx = vec![T::zero(); rows * e];
        for b in 0..nb {
            for i in nt..n {
                let dst = (b * n + i) * e;
                let src = (b * nq + i - nt) * e;
                dx[dst..dst + e].copy_from_slice(&dxq[src..src + e]);
            }
        }

        let mut a = vec![T::zero(); rows * e];
        let mut g = vec![T::zero(); rows * f];
        let mut dg = vec![T::zero(); rows * f];
        let mut da = vec![T::zero(); rows * e];
        let mut dattn = vec![T::zero(); rows * e];
        let mut dqkv = vec![T::zero(); rows * 3 * e];
        for (lo, lc) in off.layers.iter().zip(&cache.layers).rev() {
            // Feed-forward block: x_out = h + W2 gelu(W1 ln2(h)).
            for ((gv, &uv), &tv) in g.iter_mut().zip(&lc.u).zip(&lc.th) {
                *gv = gelu(uv, tv);
            }
            linear_backward(&g, &dx, rows, f, e, p, lo.w2, lo.b2, &mut grads, Some((&mut dg, false)));
            for ((d, &uv), &tv) in dg.iter_mut().zip(&lc.u).zip(&lc.th) {
                *d *= gelu_grad(uv, tv);
            }
            layer_norm_apply(&lc.xhat2, e, &p[lo.ln2_g..lo.ln2_g + e], &p[lo.ln2_b..lo.ln2_b + e], &mut a);
            linear_backward(&a, &dg, rows, e, f, p, lo.w1, lo.b1, &mut grads, Some((&mut da, false)));
            {
                let (gains, rest) = grads.split_at_mut(lo.ln2_b);
                layer_norm_backward(&da, &lc.xhat2, &lc.rstd2, e, &p[lo.ln2_g..lo.ln2_g + e], &mut dx, &mut gains[lo.ln2_g..lo.ln2_g + e], &mut rest[..e]);
            }

            // Attention block: h = x + Wo attn(W_qkv ln1(x)).
            linear_backward(&lc.attn, &dx, rows, e, e, p, lo.wo, lo.bo, &mut grads, Some((&mut dattn, false)));
            attention_backward(&shape, &lc.qkv, &lc.probs, &dattn, &mut dqkv);
            layer_norm_apply(&lc.xhat1, e, &p[lo.ln1_g..lo.ln1_g + e], &p[lo.ln1_b..lo.ln1_b + e], &mut a);
            linear_backward(&a, &dqkv, rows, e, 3 * e, p, lo.wqkv, lo.bqkv, &mut grads, Some((&mut da, false)));
            {
                let (gains, rest) = grads.split_at_mut(lo.ln1_b);
                layer_norm_backward(&da, &lc.xhat1, &lc.rstd1, e, &p[lo.ln1_g..lo.ln1_g + e], &mut dx, &mut gains[lo.ln1_g..lo.ln1_g + e], &mut rest[..e]);
            }
        }

        // Token encoder.
        for b in 0..nb {
            for i in 0..n {
                let r = b * n + i;
                let t = tokens.t_scaled[r];
                let dxr = &dx[r * e..(r + 1) * e];
                for j in 0..e {
                    grads[off.enc_t_w + j] += dxr[j] * t;
                    grads[off.enc_t_b + j] += dxr[j];
                }
                if i < nt {
                    let y = tokens.y[b * nt + i];
                    for j in 0..e {
                        grads[off.enc_y_w + j] += dxr[j] * y;
                        grads[off.enc_y_b + j] += dxr[j];
                    }
                }
            }
        }
        Ok(grads)
    }
}

/// Mean of `-log softmax(logits)[target]` over rows.
pub fn cross_entropy<T: Real>(logits: &[T], targets: &[usize], nbins: usize) -> Result<T, PfnError> {
    if logits.len() != targets.len() * nbins {
        return Err(PfnError::Shape(format!("{} logits for {} targets", logits.len(), targets.len())));
    }
    if targets.is_empty() {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    for (row, &target) in logits.chunks_exact(nbins).zip(targets) {
        if target >= nbins {
            return Err(PfnError::Shape(format!("target bin {target} >= nbins {nbins}")));
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        total += lse - row[target];
    }
    Ok(total / T::lit(targets.len() as f64))
}

/// Row-wise softmax in `f64`.
pub fn softmax_rows<T: Real>(logits: &[T], nbins: usize) -> Vec<Vec<f64>> {
    logits
        .chunks_exact(nbins)
        .map(|row| {
            let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|v| v / total).collect()
        })
        .collect()
}
