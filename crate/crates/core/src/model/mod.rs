//! A small decoder-only sequence model trained from scratch, with exact
//! analytic gradients for both training objectives and a finite-difference
//! oracle to prove them.
//!
//! All arithmetic is f64; checkpoints store f32 tensors.

mod checkpoint;
mod gradcheck;
mod loss;
mod net;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use gradcheck::{grad_check, GradCheckReport, LossKind};
pub use loss::{logprobs, rpo_loss, rpo_loss_with_ref_scores, score_identifier, sft_loss, sft_loss_and_grad, rpo_grad_with_ref_scores};
pub use net::{Forward, ScoreCache};
pub use optim::Adam;
pub use train::{train_sft, train_rpo, EpochStats, RpoExample};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds the model context of {context}")]
    SequenceTooLong { len: usize, context: usize },
    #[error("token id {0} is outside the vocabulary of size {1}")]
    TokenOutOfRange(u32, usize),
    #[error("loss became non-finite at {at} (value {value})")]
    NonFiniteLoss { at: String, value: f64 },
    #[error("positive and negative identifiers of a preference pair must differ")]
    InvalidPair,
    #[error("identifier is empty or lacks EOI termination")]
    EmptyTarget,
    #[error("no training data provided")]
    EmptyDataset,
    #[error("checkpoint is corrupt: {0}")]
    BadCheckpoint(String),
    #[error("checkpoint was trained with a different vocabulary (hash mismatch)")]
    VocabMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Vocabulary size, including specials and any atomic identifier tokens.
    pub vocab: usize,
    /// Residual width.
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Maximum input positions (one more than the longest scored sequence
    /// is never needed: BOS replaces the final target token as input).
    pub context: usize,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        assert!(self.dim % self.heads == 0, "dim must divide evenly into heads");
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w_up: Array2<f64>,
    pub b_up: Array1<f64>,
    pub w_down: Array2<f64>,
    pub b_down: Array1<f64>,
}

/// The trainable parameter set. Also reused as the gradient container,
/// since gradients have exactly the same shapes.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub w_out: Array2<f64>,
}

/// Frozen snapshot of the supervised model, used as the reference policy
/// during preference training.
#[derive(Debug, Clone)]
pub struct ReferenceModel(ModelParams);

impl ReferenceModel {
    pub fn new(params: ModelParams) -> Self {
        ReferenceModel(params)
    }

    pub fn params(&self) -> &ModelParams {
        &self.0
    }
}

/// Supervised stage knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SftConfig {
    pub lr: f64,
    pub epochs: usize,
    pub warmup_ratio: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig { lr: 2e-5, epochs: 2, warmup_ratio: 0.1, batch: 256, seed: 0 }
    }
}

/// Preference stage knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RpoConfig {
    /// Preference sharpness of the log-ratio margin.
    pub beta: f64,
    /// Weight of the length-normalized positive likelihood term.
    pub alpha: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for RpoConfig {
    fn default() -> Self {
        RpoConfig { beta: 0.5, alpha: 1.0, lr: 1e-7, epochs: 1, batch: 64, seed: 0 }
    }
}

/// Borrowed view over one parameter tensor.
pub enum ArrRef<'a> {
    A1(&'a Array1<f64>),
    A2(&'a Array2<f64>),
}

pub enum ArrMut<'a> {
    A1(&'a mut Array1<f64>),
    A2(&'a mut Array2<f64>),
}

impl ModelParams {
    /// Fresh parameters: N(0, 0.02) weights, zero biases, unit layer-norm
    /// gains. Deterministic in `seed`.
    pub fn init(cfg: ModelConfig, seed: u64) -> Self {
        cfg.validate().expect("invalid model config");
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).unwrap();
        let mut mat = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| normal.sample(&mut rng));
        let h = cfg.dim;
        let f = cfg.ffn_dim();
        let tok_emb = mat(cfg.vocab, h);
        let pos_emb = mat(cfg.context, h);
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            layers.push(LayerParams {
                ln1_g: Array1::ones(h),
                ln1_b: Array1::zeros(h),
                wq: mat(h, h),
                bq: Array1::zeros(h),
                wk: mat(h, h),
                bk: Array1::zeros(h),
                wv: mat(h, h),
                bv: Array1::zeros(h),
                wo: mat(h, h),
                bo: Array1::zeros(h),
                ln2_g: Array1::ones(h),
                ln2_b: Array1::zeros(h),
                w_up: mat(h, f),
                b_up: Array1::zeros(f),
                w_down: mat(f, h),
                b_down: Array1::zeros(h),
            });
        }
        let lnf_g = Array1::ones(h);
        let lnf_b = Array1::zeros(h);
        let w_out = mat(h, cfg.vocab);
        ModelParams { cfg, tok_emb, pos_emb, layers, lnf_g, lnf_b, w_out }
    }

    /// All-zero parameters (gives exactly uniform output distributions).
    pub fn zeros(cfg: ModelConfig) -> Self {
        let mut p = Self::init(cfg, 0);
        for a in p.arrays_mut() {
            match a {
                ArrMut::A1(x) => x.fill(0.0),
                ArrMut::A2(x) => x.fill(0.0),
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cfg)
    }

    /// Canonical tensor order shared by the optimizer, the gradient
    /// checker, and the checkpoint format.
    pub fn arrays(&self) -> Vec<ArrRef<'_>> {
        let mut v: Vec<ArrRef<'_>> = vec![ArrRef::A2(&self.tok_emb), ArrRef::A2(&self.pos_emb)];
        for l in &self.layers {
            v.push(ArrRef::A1(&l.ln1_g));
            v.push(ArrRef::A1(&l.ln1_b));
            v.push(ArrRef::A2(&l.wq));
            v.push(ArrRef::A1(&l.bq));
            v.push(ArrRef::A2(&l.wk));
            v.push(ArrRef::A1(&l.bk));
            v.push(ArrRef::A2(&l.wv));
            v.push(ArrRef::A1(&l.bv));
            v.push(ArrRef::A2(&l.wo));
            v.push(ArrRef::A1(&l.bo));
            v.push(ArrRef::A1(&l.ln2_g));
            v.push(ArrRef::A1(&l.ln2_b));
            v.push(ArrRef::A2(&l.w_up));
            v.push(ArrRef::A1(&l.b_up));
            v.push(ArrRef::A2(&l.w_down));
            v.push(ArrRef::A1(&l.b_down));
        }
        v.push(ArrRef::A1(&self.lnf_g));
        v.push(ArrRef::A1(&self.lnf_b));
        v.push(ArrRef::A2(&self.w_out));
        v
    }

    pub fn arrays_mut(&mut self) -> Vec<ArrMut<'_>> {
        let mut v: Vec<ArrMut<'_>> = vec![ArrMut::A2(&mut self.tok_emb), ArrMut::A2(&mut self.pos_emb)];
        for l in &mut self.layers {
            v.push(ArrMut::A1(&mut l.ln1_g));
            v.push(ArrMut::A1(&mut l.ln1_b));
            v.push(ArrMut::A2(&mut l.wq));
            v.push(ArrMut::A1(&mut l.bq));
            v.push(ArrMut::A2(&mut l.wk));
            v.push(ArrMut::A1(&mut l.bk));
            v.push(ArrMut::A2(&mut l.wv));
            v.push(ArrMut::A1(&mut l.bv));
            v.push(ArrMut::A2(&mut l.wo));
            v.push(ArrMut::A1(&mut l.bo));
            v.push(ArrMut::A1(&mut l.ln2_g));
            v.push(ArrMut::A1(&mut l.ln2_b));
            v.push(ArrMut::A2(&mut l.w_up));
            v.push(ArrMut::A1(&mut l.b_up));
            v.push(ArrMut::A2(&mut l.w_down));
            v.push(ArrMut::A1(&mut l.b_down));
        }
        v.push(ArrMut::A1(&mut self.lnf_g));
        v.push(ArrMut::A1(&mut self.lnf_b));
        v.push(ArrMut::A2(&mut self.w_out));
        v
    }

    /// Tensor names matching [`ModelParams::arrays`] order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for i in 0..self.layers.len() {
            for field in [
                "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln2_g",
                "ln2_b", "w_up", "b_up", "w_down", "b_down",
            ] {
                names.push(format!("layers.{i}.{field}"));
            }
        }
        names.push("lnf_g".to_string());
        names.push("lnf_b".to_string());
        names.push("w_out".to_string());
        names
    }

    pub fn param_count(&self) -> usize {
        self.arrays()
            .iter()
            .map(|a| match a {
                ArrRef::A1(x) => x.len(),
                ArrRef::A2(x) => x.len(),
            })
            .sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.arrays_mut().into_iter().zip(other.arrays()) {
            match (dst, src) {
                (ArrMut::A1(d), ArrRef::A1(s)) => d.zip_mut_with(s, |d, s| *d += scale * s),
                (ArrMut::A2(d), ArrRef::A2(s)) => d.zip_mut_with(s, |d, s| *d += scale * s),
                _ => unreachable!("tensor order mismatch"),
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.arrays_mut() {
            match a {
                ArrMut::A1(x) => x.mapv_inplace(|v| v * s),
                ArrMut::A2(x) => x.mapv_inplace(|v| v * s),
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sum = 0.0;
        for a in self.arrays() {
            match a {
                ArrRef::A1(x) => sum += x.iter().map(|v| v * v).sum::<f64>(),
                ArrRef::A2(x) => sum += x.iter().map(|v| v * v).sum::<f64>(),
            }
        }
        sum.sqrt()
    }

    /// Read or write the i-th scalar in canonical flat order. Only the
    /// finite-difference oracle needs this; it is O(#tensors) per call.
    pub fn get_flat(&self, mut i: usize) -> f64 {
        for a in self.arrays() {
            let (len, val) = match &a {
                ArrRef::A1(x) => (x.len(), x.as_slice().unwrap()),
                ArrRef::A2(x) => (x.len(), x.as_slice().unwrap()),
            };
            if i < len {
                return val[i];
            }
            i -= len;
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut i: usize, value: f64) {
        for a in self.arrays_mut() {
            match a {
                ArrMut::A1(x) => {
                    if i < x.len() {
                        x.as_slice_mut().unwrap()[i] = value;
                        return;
                    }
                    i -= x.len();
                }
                ArrMut::A2(x) => {
                    if i < x.len() {
                        x.as_slice_mut().unwrap()[i] = value;
                        return;
                    }
                    i -= x.len();
                }
            }
        }
        panic!("flat index out of range");
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log(sigmoid(x))`, stable for large |x|.
pub fn log_sigmoid_neg(x: f64) -> f64 {
    if x >= 0.0 {
        (1.0 + (-x).exp()).ln()
    } else {
        -x + (1.0 + x.exp()).ln()
    }
}

#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig { vocab: 12, dim: 6, layers: 1, heads: 2, context: 16 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_stays_under_1k_params() {
        let p = ModelParams::init(tiny_config(), 0);
        assert!(p.param_count() <= 1000, "{} params", p.param_count());
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::init(tiny_config(), 42);
        let b = ModelParams::init(tiny_config(), 42);
        assert_eq!(a.tok_emb, b.tok_emb);
        assert_eq!(a.layers[0].wq, b.layers[0].wq);
        let c = ModelParams::init(tiny_config(), 43);
        assert_ne!(a.tok_emb, c.tok_emb);
    }

    #[test]
    fn flat_access_round_trips() {
        let mut p = ModelParams::init(tiny_config(), 1);
        let n = p.param_count();
        let probe = [0, 1, n / 2, n - 1];
        for &i in &probe {
            let v = p.get_flat(i);
            p.set_flat(i, v + 1.5);
            assert_eq!(p.get_flat(i), v + 1.5);
            p.set_flat(i, v);
        }
    }

    #[test]
    fn names_align_with_arrays() {
        let p = ModelParams::init(tiny_config(), 0);
        assert_eq!(p.tensor_names().len(), p.arrays().len());
    }

    #[test]
    fn sigmoid_identities() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!((log_sigmoid_neg(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((sigmoid(30.0) - 1.0).abs() < 1e-12);
        assert!(log_sigmoid_neg(-50.0) > 49.0);
    }
}
