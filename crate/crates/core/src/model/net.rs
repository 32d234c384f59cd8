//! Forward and backward passes of the decoder, plus an incremental
//! key/value-cached scorer for beam search.
//!
//! A scored sequence `seq` of length T is fed to the network as
//! `[BOS, seq[0], …, seq[T-2]]`, so hidden position `i` predicts `seq[i]`
//! and the input never exceeds T positions.

use ndarray::{s, Array1, Array2, Axis};

use super::{ModelError, ModelParams};
use crate::corpus::BOS;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_K * u * u * u)).tanh())
}

fn gelu_prime(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_K * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn ln_forward(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let h = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / h;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / h;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

fn ln_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    let h = dy.ncols() as f64;
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dxh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let m1 = dxh.sum() / h;
        let m2 = dxh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / h;
        let rs = cache.rstd[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = (dxh[j] - m1 - xh[j] * m2) * rs;
        }
    }
    dx
}

fn softmax_rows_inplace(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

struct LayerFwd {
    a: Array2<f64>,
    ln1: LnCache,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per-head attention weights, each `[T, T]`, causally masked.
    att: Vec<Array2<f64>>,
    /// Concatenated head outputs before the output projection.
    heads_out: Array2<f64>,
    a2: Array2<f64>,
    ln2: LnCache,
    up_pre: Array2<f64>,
    up_act: Array2<f64>,
}

/// Cached activations of one full pass, enough to run `backward` or to
/// read per-position next-token log-probabilities.
pub struct Forward {
    seq: Vec<u32>,
    inputs: Vec<u32>,
    layers: Vec<LayerFwd>,
    lnf: LnCache,
    fx: Array2<f64>,
    /// Row `i` is the log-probability distribution over the token at
    /// sequence position `i`, given everything before it.
    pub logprobs: Array2<f64>,
}

impl Forward {
    /// Summed log-probability of positions `[from, to)` of the sequence.
    pub fn span_logprob(&self, from: usize, to: usize) -> f64 {
        (from..to)
            .map(|i| self.logprobs[[i, self.seq[i] as usize]])
            .sum()
    }

    pub fn seq_len(&self) -> usize {
        self.seq.len()
    }
}

fn check_tokens(params: &ModelParams, seq: &[u32]) -> Result<(), ModelError> {
    if seq.is_empty() {
        return Err(ModelError::EmptyTarget);
    }
    if seq.len() > params.cfg.context {
        return Err(ModelError::SequenceTooLong { len: seq.len(), context: params.cfg.context });
    }
    if let Some(&bad) = seq.iter().find(|&&t| t as usize >= params.cfg.vocab) {
        return Err(ModelError::TokenOutOfRange(bad, params.cfg.vocab));
    }
    Ok(())
}

/// Full training-path forward pass over `seq` (BOS is prepended
/// internally; the final target token is never fed as input).
pub fn forward(params: &ModelParams, seq: &[u32]) -> Result<Forward, ModelError> {
    check_tokens(params, seq)?;
    let t_len = seq.len();
    let h = params.cfg.dim;
    let heads = params.cfg.heads;
    let dh = params.cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut inputs = Vec::with_capacity(t_len);
    inputs.push(BOS);
    inputs.extend_from_slice(&seq[..t_len - 1]);

    let mut x = Array2::zeros((t_len, h));
    for (t, &tok) in inputs.iter().enumerate() {
        let row = &params.tok_emb.row(tok as usize) + &params.pos_emb.row(t);
        x.row_mut(t).assign(&row);
    }

    let mut layer_caches = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let (a, ln1) = ln_forward(&x, &lp.ln1_g, &lp.ln1_b);
        let q = a.dot(&lp.wq) + &lp.bq;
        let k = a.dot(&lp.wk) + &lp.bk;
        let v = a.dot(&lp.wv) + &lp.bv;
        let mut att = Vec::with_capacity(heads);
        let mut heads_out = Array2::zeros((t_len, h));
        for m in 0..heads {
            let r = m * dh..(m + 1) * dh;
            let qm = q.slice(s![.., r.clone()]);
            let km = k.slice(s![.., r.clone()]);
            let vm = v.slice(s![.., r.clone()]);
            let mut scores = qm.dot(&km.t());
            scores.mapv_inplace(|v| v * scale);
            for i in 0..t_len {
                for j in (i + 1)..t_len {
                    scores[[i, j]] = f64::NEG_INFINITY;
                }
            }
            softmax_rows_inplace(&mut scores);
            let om = scores.dot(&vm);
            heads_out.slice_mut(s![.., r]).assign(&om);
            att.push(scores);
        }
        let attn_out = heads_out.dot(&lp.wo) + &lp.bo;
        let x_mid = &x + &attn_out;
        let (a2, ln2) = ln_forward(&x_mid, &lp.ln2_g, &lp.ln2_b);
        let up_pre = a2.dot(&lp.w_up) + &lp.b_up;
        let up_act = up_pre.mapv(gelu);
        let down = up_act.dot(&lp.w_down) + &lp.b_down;
        x = &x_mid + &down;
        layer_caches.push(LayerFwd {
            a,
            ln1,
            q,
            k,
            v,
            att,
            heads_out,
            a2,
            ln2,
            up_pre,
            up_act,
        });
    }

    let (fx, lnf) = ln_forward(&x, &params.lnf_g, &params.lnf_b);
    let logits = fx.dot(&params.w_out);
    let logprobs = log_softmax_rows(&logits);
    Ok(Forward {
        seq: seq.to_vec(),
        inputs,
        layers: layer_caches,
        lnf,
        fx,
        logprobs,
    })
}

/// Backward pass for the loss `Σ_i w_i · (−log p(seq[i]))`, where `w` may
/// hold any real weights (negative weights push probability mass away).
/// Gradients are accumulated into `grads`.
pub fn backward(params: &ModelParams, fwd: &Forward, pos_weights: &[f64], grads: &mut ModelParams) {
    let t_len = fwd.seq.len();
    assert_eq!(pos_weights.len(), t_len, "one weight per sequence position");
    let h = params.cfg.dim;
    let heads = params.cfg.heads;
    let dh = params.cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // d(loss)/d(logits): w_i * (softmax_i - onehot(target_i)).
    let mut dlogits = fwd.logprobs.mapv(f64::exp);
    for i in 0..t_len {
        let w = pos_weights[i];
        let target = fwd.seq[i] as usize;
        let mut row = dlogits.row_mut(i);
        row.mapv_inplace(|p| p * w);
        row[target] -= w;
    }

    grads.w_out += &fwd.fx.t().dot(&dlogits);
    let dfx = dlogits.dot(&params.w_out.t());
    let mut dx = ln_backward(&dfx, &fwd.lnf, &params.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);
    drop(dlogits);

    for (li, (lp, lf)) in params.layers.iter().zip(&fwd.layers).enumerate().rev() {
        let gl = &mut grads.layers[li];
        // FFN branch.
        let dd = &dx;
        gl.w_down += &lf.up_act.t().dot(dd);
        gl.b_down += &dd.sum_axis(Axis(0));
        let dup_act = dd.dot(&lp.w_down.t());
        let mut du = dup_act;
        du.zip_mut_with(&lf.up_pre, |d, &u| *d *= gelu_prime(u));
        gl.w_up += &lf.a2.t().dot(&du);
        gl.b_up += &du.sum_axis(Axis(0));
        let da2 = du.dot(&lp.w_up.t());
        let dx_ln2 = ln_backward(&da2, &lf.ln2, &lp.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);
        let dx_mid = &dx + &dx_ln2;

        // Attention branch.
        let dattn_out = &dx_mid;
        gl.wo += &lf.heads_out.t().dot(dattn_out);
        gl.bo += &dattn_out.sum_axis(Axis(0));
        let dheads = dattn_out.dot(&lp.wo.t());
        let mut dq = Array2::zeros((t_len, h));
        let mut dk = Array2::zeros((t_len, h));
        let mut dv = Array2::zeros((t_len, h));
        for m in 0..heads {
            let r = m * dh..(m + 1) * dh;
            let dom = dheads.slice(s![.., r.clone()]);
            let p = &lf.att[m];
            let vm = lf.v.slice(s![.., r.clone()]);
            let qm = lf.q.slice(s![.., r.clone()]);
            let km = lf.k.slice(s![.., r.clone()]);
            let dp = dom.dot(&vm.t());
            dv.slice_mut(s![.., r.clone()]).assign(&p.t().dot(&dom));
            // Softmax backward per row: ds = p ⊙ (dp − Σ_j dp⊙p).
            let mut ds = dp;
            for i in 0..t_len {
                let dot: f64 = ds
                    .row(i)
                    .iter()
                    .zip(p.row(i).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                for j in 0..t_len {
                    ds[[i, j]] = p[[i, j]] * (ds[[i, j]] - dot);
                }
            }
            let mut dqm = ds.dot(&km);
            dqm.mapv_inplace(|v| v * scale);
            dq.slice_mut(s![.., r.clone()]).assign(&dqm);
            let mut dkm = ds.t().dot(&qm);
            dkm.mapv_inplace(|v| v * scale);
            dk.slice_mut(s![.., r]).assign(&dkm);
        }
        gl.wq += &lf.a.t().dot(&dq);
        gl.bq += &dq.sum_axis(Axis(0));
        gl.wk += &lf.a.t().dot(&dk);
        gl.bk += &dk.sum_axis(Axis(0));
        gl.wv += &lf.a.t().dot(&dv);
        gl.bv += &dv.sum_axis(Axis(0));
        let da = dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
        let dx_ln1 = ln_backward(&da, &lf.ln1, &lp.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
        dx = dx_mid + dx_ln1;
    }

    for (t, &tok) in fwd.inputs.iter().enumerate() {
        let mut row = grads.tok_emb.row_mut(tok as usize);
        row += &dx.row(t);
        let mut prow = grads.pos_emb.row_mut(t);
        prow += &dx.row(t);
    }
}

// ---------------------------------------------------------------------------
// Incremental scorer
// ---------------------------------------------------------------------------

/// Key/value cache for step-by-step decoding. Cloning a cache forks the
/// decode state, which is how beam hypotheses branch from a shared query
/// prefix without re-running it.
#[derive(Clone)]
pub struct ScoreCache {
    k: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    len: usize,
}

impl ScoreCache {
    /// Feed `[BOS, prefix…]` and return the cache plus the log-probability
    /// distribution over the next token.
    pub fn start(params: &ModelParams, prefix: &[u32]) -> Result<(Self, Vec<f64>), ModelError> {
        if prefix.len() + 1 > params.cfg.context {
            return Err(ModelError::SequenceTooLong {
                len: prefix.len() + 1,
                context: params.cfg.context,
            });
        }
        let h = params.cfg.dim;
        let mut cache = ScoreCache {
            k: vec![Array2::zeros((0, h)); params.layers.len()],
            v: vec![Array2::zeros((0, h)); params.layers.len()],
            len: 0,
        };
        let mut logprobs = cache.advance(params, BOS)?;
        for &tok in prefix {
            logprobs = cache.advance(params, tok)?;
        }
        Ok((cache, logprobs))
    }

    /// Number of positions consumed so far (BOS included).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Append one token and return the next-token log-probabilities.
    pub fn advance(&mut self, params: &ModelParams, token: u32) -> Result<Vec<f64>, ModelError> {
        if token as usize >= params.cfg.vocab {
            return Err(ModelError::TokenOutOfRange(token, params.cfg.vocab));
        }
        if self.len >= params.cfg.context {
            return Err(ModelError::SequenceTooLong {
                len: self.len + 1,
                context: params.cfg.context,
            });
        }
        let pos = self.len;
        let heads = params.cfg.heads;
        let dh = params.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = &params.tok_emb.row(token as usize) + &params.pos_emb.row(pos);
        for (li, lp) in params.layers.iter().enumerate() {
            let a = ln_vec(&x, &lp.ln1_g, &lp.ln1_b);
            let q = a.dot(&lp.wq) + &lp.bq;
            let k = a.dot(&lp.wk) + &lp.bk;
            let v = a.dot(&lp.wv) + &lp.bv;
            self.k[li].push_row(k.view()).expect("cache append");
            self.v[li].push_row(v.view()).expect("cache append");
            let t_now = pos + 1;
            let mut heads_out = Array1::zeros(params.cfg.dim);
            for m in 0..heads {
                let r = m * dh..(m + 1) * dh;
                let qm = q.slice(s![r.clone()]);
                let km = self.k[li].slice(s![..t_now, r.clone()]);
                let vm = self.v[li].slice(s![..t_now, r.clone()]);
                let mut scores = km.dot(&qm);
                scores.mapv_inplace(|v| v * scale);
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                scores.mapv_inplace(|v| (v - max).exp());
                let sum = scores.sum();
                scores.mapv_inplace(|v| v / sum);
                let om = scores.dot(&vm);
                heads_out.slice_mut(s![r]).assign(&om);
            }
            let attn_out = heads_out.dot(&lp.wo) + &lp.bo;
            let x_mid = &x + &attn_out;
            let a2 = ln_vec(&x_mid, &lp.ln2_g, &lp.ln2_b);
            let up = (a2.dot(&lp.w_up) + &lp.b_up).mapv(gelu);
            let down = up.dot(&lp.w_down) + &lp.b_down;
            x = x_mid + down;
        }
        let fx = ln_vec(&x, &params.lnf_g, &params.lnf_b);
        let logits = fx.dot(&params.w_out);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        self.len += 1;
        Ok(logits.iter().map(|v| v - lse).collect())
    }
}

fn ln_vec(x: &Array1<f64>, g: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
    let h = x.len() as f64;
    let mean = x.sum() / h;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    let mut y = x.mapv(|v| (v - mean) * rstd);
    y = y * g + b;
    y
}
