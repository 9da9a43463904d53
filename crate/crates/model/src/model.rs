//! Decoder-only transformer over unified point-cloud/text sequences.
//!
//! Block: `x += Attn(rms(x))`, `x += MLP(rms(x))`, then `logits = rms(x) @ head`.
//! RMS norms carry no gain, the MLP uses tanh-GELU, and position embeddings are
//! learned. Patch tokens enter through a bias-free linear projector; every other
//! token indexes the embedding table. Backward passes are written by hand and
//! checked against finite differences in [`crate::gradcheck`].

use ptk_core::{Token, TokenSequence};

use crate::error::{ModelError, Result};
use crate::params::{ToyModelConfig, ToyModelParams};
use crate::vocab;

const RMS_EPS: f64 = 1e-5;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// `out[n x m] += a[n x k] @ b[k x m]`
fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let o = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (ov, bv) in o.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *ov += av * bv;
            }
        }
    }
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    matmul_acc(&mut out, a, b, n, k, m);
    out
}

/// `out[k x m] += a[n x k]^T @ g[n x m]`
fn matmul_at_acc(out: &mut [f64], a: &[f64], g: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let gr = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (ov, gv) in out[p * m..(p + 1) * m].iter_mut().zip(gr) {
                *ov += av * gv;
            }
        }
    }
}

/// `out[n x k] += g[n x m] @ b[k x m]^T`
fn matmul_bt_acc(out: &mut [f64], g: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let gr = &g[i * m..(i + 1) * m];
        for p in 0..k {
            out[i * k + p] += dot(gr, &b[p * m..(p + 1) * m]);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise RMS norm; returns normalized rows and each row's inverse RMS.
fn rms_rows(x: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; n * d];
    let mut inv = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let ms = dot(row, row) / d as f64;
        let r = 1.0 / (ms + RMS_EPS).sqrt();
        inv[i] = r;
        for (yv, xv) in y[i * d..(i + 1) * d].iter_mut().zip(row) {
            *yv = xv * r;
        }
    }
    (y, inv)
}

/// Adds the gradient through `rms_rows` to `dx`.
fn rms_rows_backward(dx: &mut [f64], dy: &[f64], x: &[f64], inv: &[f64], n: usize, d: usize) {
    for i in 0..n {
        let (xr, dyr) = (&x[i * d..(i + 1) * d], &dy[i * d..(i + 1) * d]);
        let r = inv[i];
        let c = r * r * r * dot(dyr, xr) / d as f64;
        for ((dv, dyv), xv) in dx[i * d..(i + 1) * d].iter_mut().zip(dyr).zip(xr) {
            *dv += r * dyv - c * xv;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows, logits.cols);
    for i in 0..logits.rows {
        out.row_mut(i).copy_from_slice(&softmax(logits.row(i)));
    }
    out
}

fn check_vocab(id: u32, cfg: &ToyModelConfig) -> Result<()> {
    if (id as usize) < cfg.vocab_size {
        Ok(())
    } else {
        Err(ModelError::TokenOutOfVocab {
            id,
            vocab: cfg.vocab_size,
        })
    }
}

/// One row per token: projected patch vectors for `Patch` slots, embedding-table
/// rows for everything else.
pub fn embed_sequence(params: &ToyModelParams, seq: &TokenSequence) -> Result<Matrix> {
    let cfg = &params.config;
    let d = cfg.d_model;
    if seq.patch_count() > 0 && seq.patch_dim != cfg.patch_dim() {
        return Err(ModelError::ShapeMismatch(format!(
            "patch vectors have length {}, projector expects {}",
            seq.patch_dim,
            cfg.patch_dim()
        )));
    }
    let projector = params.slice(&params.layout.projector);
    let table = params.slice(&params.layout.tok_emb);
    let mut out = Matrix::zeros(seq.tokens.len(), d);
    for (t, token) in seq.tokens.iter().enumerate() {
        match vocab::token_id(token) {
            Some(id) => {
                check_vocab(id, cfg)?;
                out.row_mut(t).copy_from_slice(&table[id as usize * d..(id as usize + 1) * d]);
            }
            None => {
                let Token::Patch(slot) = *token else { unreachable!() };
                if slot >= seq.patch_count() {
                    return Err(ModelError::ShapeMismatch(format!("patch slot {slot} has no matrix row")));
                }
                let row = seq.patch_row(slot);
                matmul_acc(out.row_mut(t), row, projector, 1, row.len(), d);
            }
        }
    }
    Ok(out)
}

fn embed_backward(params: &ToyModelParams, seq: &TokenSequence, d_embedded: &[f64], grads: &mut ToyModelParams) {
    let d = params.config.d_model;
    let layout = &params.layout;
    for (t, token) in seq.tokens.iter().enumerate() {
        let g = &d_embedded[t * d..(t + 1) * d];
        match vocab::token_id(token) {
            Some(id) => {
                let start = layout.tok_emb.start + id as usize * d;
                for (o, v) in grads.data[start..start + d].iter_mut().zip(g) {
                    *o += v;
                }
            }
            None => {
                let Token::Patch(slot) = *token else { unreachable!() };
                let row = seq.patch_row(slot);
                let proj = &mut grads.data[layout.projector.clone()];
                matmul_at_acc(proj, row, g, 1, row.len(), d);
            }
        }
    }
}

struct LayerCache {
    x_in: Vec<f64>,
    a_in: Vec<f64>,
    a_inv: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights, `heads x T x T`, zero above the diagonal.
    probs: Vec<f64>,
    o: Vec<f64>,
    x_mid: Vec<f64>,
    m_in: Vec<f64>,
    m_inv: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

/// Activations saved by [`forward_cached`] for the backward pass.
pub struct ForwardCache {
    len: usize,
    layers: Vec<LayerCache>,
    x_final: Vec<f64>,
    f: Vec<f64>,
    f_inv: Vec<f64>,
}

/// Causal forward pass from embedded rows to logits.
pub fn forward(params: &ToyModelParams, embedded: &Matrix) -> Result<Matrix> {
    forward_cached(params, embedded).map(|(logits, _)| logits)
}

pub fn forward_cached(params: &ToyModelParams, embedded: &Matrix) -> Result<(Matrix, ForwardCache)> {
    let cfg = &params.config;
    let (d, n) = (cfg.d_model, embedded.rows);
    if embedded.cols != d {
        return Err(ModelError::ShapeMismatch(format!("embedded width {} != d_model {d}", embedded.cols)));
    }
    if n == 0 {
        return Err(ModelError::ShapeMismatch("empty sequence".into()));
    }
    if n > cfg.max_seq {
        return Err(ModelError::SequenceTooLong { len: n, max: cfg.max_seq });
    }
    let (h, hd, f) = (cfg.n_heads, cfg.head_dim(), cfg.ffn_dim());
    let scale = 1.0 / (hd as f64).sqrt();
    let w = |r: &std::ops::Range<usize>| params.slice(r);

    let mut x = embedded.data.clone();
    for (xv, pv) in x.iter_mut().zip(w(&params.layout.pos_emb)) {
        *xv += pv;
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lay in &params.layout.layers {
        let x_in = x.clone();
        let (a_in, a_inv) = rms_rows(&x_in, n, d);
        let q = matmul(&a_in, w(&lay.wq), n, d, d);
        let k = matmul(&a_in, w(&lay.wk), n, d, d);
        let v = matmul(&a_in, w(&lay.wv), n, d, d);

        let mut probs = vec![0.0; h * n * n];
        let mut o = vec![0.0; n * d];
        for head in 0..h {
            let cols = head * hd..(head + 1) * hd;
            for i in 0..n {
                let qi = &q[i * d..][cols.clone()];
                let scores: Vec<f64> = (0..=i).map(|j| dot(qi, &k[j * d..][cols.clone()]) * scale).collect();
                let p = softmax(&scores);
                let oi = &mut o[i * d..][cols.clone()];
                for (j, pj) in p.iter().enumerate() {
                    for (ov, vv) in oi.iter_mut().zip(&v[j * d..][cols.clone()]) {
                        *ov += pj * vv;
                    }
                }
                probs[(head * n + i) * n..(head * n + i) * n + i + 1].copy_from_slice(&p);
            }
        }
        matmul_acc(&mut x, &o, w(&lay.wo), n, d, d);
        let x_mid = x.clone();

        let (m_in, m_inv) = rms_rows(&x_mid, n, d);
        let mut u = matmul(&m_in, w(&lay.w1), n, d, f);
        for row in u.chunks_exact_mut(f) {
            for (uv, bv) in row.iter_mut().zip(w(&lay.b1)) {
                *uv += bv;
            }
        }
        let g: Vec<f64> = u.iter().map(|&uv| gelu(uv)).collect();
        matmul_acc(&mut x, &g, w(&lay.w2), n, f, d);
        for row in x.chunks_exact_mut(d) {
            for (xv, bv) in row.iter_mut().zip(w(&lay.b2)) {
                *xv += bv;
            }
        }
        layers.push(LayerCache {
            x_in,
            a_in,
            a_inv,
            q,
            k,
            v,
            probs,
            o,
            x_mid,
            m_in,
            m_inv,
            u,
            g,
        });
    }

    let (fnorm, f_inv) = rms_rows(&x, n, d);
    let vocab = cfg.vocab_size;
    let logits = Matrix {
        rows: n,
        cols: vocab,
        data: matmul(&fnorm, w(&params.layout.head), n, d, vocab),
    };
    Ok((
        logits,
        ForwardCache {
            len: n,
            layers,
            x_final: x,
            f: fnorm,
            f_inv,
        },
    ))
}

/// Accumulates parameter gradients for `d_logits` into `grads` and returns the
/// gradient with respect to the embedded input rows.
pub fn backward(params: &ToyModelParams, cache: &ForwardCache, d_logits: &Matrix, grads: &mut ToyModelParams) -> Vec<f64> {
    let cfg = &params.config;
    let (d, n, vocab) = (cfg.d_model, cache.len, cfg.vocab_size);
    let (h, hd, ff) = (cfg.n_heads, cfg.head_dim(), cfg.ffn_dim());
    let scale = 1.0 / (hd as f64).sqrt();
    let layout = &params.layout;
    let w = |r: &std::ops::Range<usize>| params.slice(r);

    matmul_at_acc(&mut grads.data[layout.head.clone()], &cache.f, &d_logits.data, n, d, vocab);
    let mut df = vec![0.0; n * d];
    matmul_bt_acc(&mut df, &d_logits.data, w(&layout.head), n, d, vocab);
    let mut dx = vec![0.0; n * d];
    rms_rows_backward(&mut dx, &df, &cache.x_final, &cache.f_inv, n, d);

    for (lay, c) in layout.layers.iter().zip(&cache.layers).rev() {
        // MLP branch; dx flows straight through the residual.
        for row in dx.chunks_exact(d) {
            for (gb, v) in grads.data[lay.b2.clone()].iter_mut().zip(row) {
                *gb += v;
            }
        }
        matmul_at_acc(&mut grads.data[lay.w2.clone()], &c.g, &dx, n, ff, d);
        let mut du = vec![0.0; n * ff];
        matmul_bt_acc(&mut du, &dx, w(&lay.w2), n, ff, d);
        for (duv, &uv) in du.iter_mut().zip(&c.u) {
            *duv *= gelu_grad(uv);
        }
        for row in du.chunks_exact(ff) {
            for (gb, v) in grads.data[lay.b1.clone()].iter_mut().zip(row) {
                *gb += v;
            }
        }
        matmul_at_acc(&mut grads.data[lay.w1.clone()], &c.m_in, &du, n, d, ff);
        let mut dm_in = vec![0.0; n * d];
        matmul_bt_acc(&mut dm_in, &du, w(&lay.w1), n, d, ff);
        rms_rows_backward(&mut dx, &dm_in, &c.x_mid, &c.m_inv, n, d);

        // Attention branch.
        matmul_at_acc(&mut grads.data[lay.wo.clone()], &c.o, &dx, n, d, d);
        let mut d_o = vec![0.0; n * d];
        matmul_bt_acc(&mut d_o, &dx, w(&lay.wo), n, d, d);

        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        for head in 0..h {
            let cols = head * hd..(head + 1) * hd;
            for i in 0..n {
                let p = &c.probs[(head * n + i) * n..(head * n + i) * n + i + 1];
                let doi = &d_o[i * d..][cols.clone()];
                let dp: Vec<f64> = (0..=i).map(|j| dot(doi, &c.v[j * d..][cols.clone()])).collect();
                let mix = dot(p, &dp);
                for j in 0..=i {
                    for (dvv, dov) in dv[j * d..][cols.clone()].iter_mut().zip(doi) {
                        *dvv += p[j] * dov;
                    }
                    let ds = p[j] * (dp[j] - mix) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for (t, col) in cols.clone().enumerate() {
                        dq[i * d + col] += ds * c.k[j * d + cols.start + t];
                        dk[j * d + col] += ds * c.q[i * d + cols.start + t];
                    }
                }
            }
        }
        let mut da = vec![0.0; n * d];
        for (wr, dm) in [(&lay.wq, &dq), (&lay.wk, &dk), (&lay.wv, &dv)] {
            matmul_at_acc(&mut grads.data[wr.clone()], &c.a_in, dm, n, d, d);
            matmul_bt_acc(&mut da, dm, w(wr), n, d, d);
        }
        rms_rows_backward(&mut dx, &da, &c.x_in, &c.a_inv, n, d);
    }

    for (gp, v) in grads.data[layout.pos_emb.start..layout.pos_emb.start + n * d].iter_mut().zip(&dx) {
        *gp += v;
    }
    dx
}

/// A training sequence and the positions whose next token is supervised.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sequence: TokenSequence,
    /// `loss_mask[t]` selects the prediction of `tokens[t + 1]` made at position `t`.
    pub loss_mask: Vec<bool>,
}

impl Example {
    /// Checks that the mask has one flag per token, selects at least one position,
    /// and only selects positions followed by a text token.
    pub fn new(sequence: TokenSequence, loss_mask: Vec<bool>) -> Result<Self> {
        let n = sequence.tokens.len();
        if loss_mask.len() != n {
            return Err(ModelError::BadMask(format!("{} flags for {n} tokens", loss_mask.len())));
        }
        for (t, &on) in loss_mask.iter().enumerate() {
            if on && !matches!(sequence.tokens.get(t + 1), Some(Token::Text(_))) {
                return Err(ModelError::BadMask(format!("position {t} does not predict a text token")));
            }
        }
        if !loss_mask.contains(&true) {
            return Err(ModelError::EmptyMask);
        }
        Ok(Self { sequence, loss_mask })
    }

    /// Appends `prompt` and `answer` text after the point-cloud tokens and supervises
    /// exactly the answer tokens.
    pub fn with_answer(mut sequence: TokenSequence, prompt: &[u32], answer: &[u32]) -> Result<Self> {
        let start = sequence.tokens.len() + prompt.len();
        sequence.tokens.extend(prompt.iter().chain(answer).map(|&id| Token::Text(id)));
        let mut mask = vec![false; sequence.tokens.len()];
        for flag in &mut mask[start.saturating_sub(1)..start.saturating_sub(1) + answer.len()] {
            *flag = true;
        }
        Self::new(sequence, mask)
    }

    /// `(position, target id)` for every supervised position.
    pub fn targets(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.loss_mask.iter().enumerate().filter(|(_, &on)| on).map(|(t, _)| match self.sequence.tokens[t + 1] {
            Token::Text(id) => (t, id),
            _ => unreachable!("validated in Example::new"),
        })
    }

    pub fn supervised(&self) -> usize {
        self.loss_mask.iter().filter(|&&on| on).count()
    }
}

fn check_targets(params: &ToyModelParams, batch: &[Example]) -> Result<usize> {
    if batch.is_empty() {
        return Err(ModelError::EmptyMask);
    }
    let mut total = 0;
    for ex in batch {
        if ex.supervised() == 0 {
            return Err(ModelError::EmptyMask);
        }
        for (_, id) in ex.targets() {
            check_vocab(id, &params.config)?;
        }
        total += ex.supervised();
    }
    Ok(total)
}

fn nll(logits_row: &[f64], target: u32) -> f64 {
    let max = logits_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits_row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits_row[target as usize]
}

/// Mean negative log-likelihood over every supervised position in the batch.
pub fn loss(params: &ToyModelParams, batch: &[Example]) -> Result<f64> {
    let total = check_targets(params, batch)?;
    let mut sum = 0.0;
    for ex in batch {
        let logits = forward(params, &embed_sequence(params, &ex.sequence)?)?;
        for (t, target) in ex.targets() {
            sum += nll(logits.row(t), target);
        }
    }
    Ok(sum / total as f64)
}

/// Gradient of the loss with respect to the logits of one example, each supervised
/// row scaled by `1 / total`. Unsupervised rows are exactly zero.
pub fn loss_logit_grad(logits: &Matrix, ex: &Example, total: usize) -> Matrix {
    let mut d = Matrix::zeros(logits.rows, logits.cols);
    for (t, target) in ex.targets() {
        let p = softmax(logits.row(t));
        let row = d.row_mut(t);
        for (g, pv) in row.iter_mut().zip(&p) {
            *g = pv / total as f64;
        }
        row[target as usize] -= 1.0 / total as f64;
    }
    d
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grad(params: &ToyModelParams, batch: &[Example]) -> Result<(f64, ToyModelParams)> {
    let total = check_targets(params, batch)?;
    let mut grads = params.zeros_like();
    let mut sum = 0.0;
    for ex in batch {
        let embedded = embed_sequence(params, &ex.sequence)?;
        let (logits, cache) = forward_cached(params, &embedded)?;
        for (t, target) in ex.targets() {
            sum += nll(logits.row(t), target);
        }
        let d_logits = loss_logit_grad(&logits, ex, total);
        let d_embedded = backward(params, &cache, &d_logits, &mut grads);
        embed_backward(params, &ex.sequence, &d_embedded, &mut grads);
    }
    Ok((sum / total as f64, grads))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Whether greedy decoding reproduces every supervised token.
///
/// With teacher forcing, each supervised position sees the reference prefix. If all
/// argmaxes match, greedy decoding would have produced that same prefix step by
/// step, so one forward pass decides exact match.
pub fn exact_match(params: &ToyModelParams, ex: &Example) -> Result<bool> {
    let logits = forward(params, &embed_sequence(params, &ex.sequence)?)?;
    Ok(ex.targets().all(|(t, target)| argmax(logits.row(t)) == target as usize))
}

/// Greedy prediction at the first supervised position.
pub fn predict_first(params: &ToyModelParams, ex: &Example) -> Result<u32> {
    let logits = forward(params, &embed_sequence(params, &ex.sequence)?)?;
    let (t, _) = ex.targets().next().ok_or(ModelError::EmptyMask)?;
    Ok(argmax(logits.row(t)) as u32)
}
