//! Sequence scoring and the two training objectives.
//!
//! The supervised loss is the negative log-likelihood of the combined
//! input-and-identifier sequence, so the model both memorizes context and
//! learns to decode identifiers. The preference loss is a sigmoid
//! preference margin over policy/reference log-ratios of the positive and
//! negative identifiers, regularized by the length-normalized positive
//! likelihood.

use ndarray::Array2;

use super::net::{backward, forward};
use super::{log_sigmoid_neg, sigmoid, ModelError, ModelParams, ReferenceModel, RpoConfig};
use crate::corpus::EOI;
use crate::dataset::TrainingExample;

/// Per-position next-token log-probabilities for `tokens`: row `i` is the
/// distribution over position `i` given positions `< i`.
pub fn logprobs(params: &ModelParams, tokens: &[u32]) -> Result<Array2<f64>, ModelError> {
    Ok(forward(params, tokens)?.logprobs)
}

fn check_identifier(id_tokens: &[u32]) -> Result<(), ModelError> {
    if id_tokens.is_empty() || *id_tokens.last().unwrap() != EOI {
        return Err(ModelError::EmptyTarget);
    }
    Ok(())
}

/// `log P(identifier | query)`: the summed log-probability of the
/// identifier tokens (EOI included) after the query.
pub fn score_identifier(params: &ModelParams, query: &[u32], id_tokens: &[u32]) -> Result<f64, ModelError> {
    check_identifier(id_tokens)?;
    let mut seq = query.to_vec();
    seq.extend_from_slice(id_tokens);
    let fwd = forward(params, &seq)?;
    Ok(fwd.span_logprob(query.len(), seq.len()))
}

/// Negative log-likelihood of the whole example sequence: input tokens and
/// identifier tokens both count.
pub fn sft_loss(params: &ModelParams, ex: &TrainingExample) -> Result<f64, ModelError> {
    check_identifier(&ex.target_tokens)?;
    let mut seq = ex.input_tokens.clone();
    seq.extend_from_slice(&ex.target_tokens);
    let fwd = forward(params, &seq)?;
    Ok(-fwd.span_logprob(0, seq.len()))
}

/// Loss plus analytic gradient, accumulated into `grads`.
pub fn sft_loss_and_grad(
    params: &ModelParams,
    ex: &TrainingExample,
    grads: &mut ModelParams,
) -> Result<f64, ModelError> {
    check_identifier(&ex.target_tokens)?;
    let mut seq = ex.input_tokens.clone();
    seq.extend_from_slice(&ex.target_tokens);
    let fwd = forward(params, &seq)?;
    let loss = -fwd.span_logprob(0, seq.len());
    backward(params, &fwd, &vec![1.0; seq.len()], grads);
    Ok(loss)
}

/// Preference loss against a frozen reference model. Query tokens carry no
/// loss here; only the identifier likelihoods enter the objective.
pub fn rpo_loss(
    params: &ModelParams,
    reference: &ReferenceModel,
    query: &[u32],
    positive: &[u32],
    negative: &[u32],
    cfg: &RpoConfig,
) -> Result<f64, ModelError> {
    let ref_p = score_identifier(reference.params(), query, positive)?;
    let ref_n = score_identifier(reference.params(), query, negative)?;
    rpo_loss_with_ref_scores(params, query, positive, negative, ref_p, ref_n, cfg)
}

/// Preference loss with the reference scores already computed (the
/// reference is frozen, so training precomputes them once per pair).
pub fn rpo_loss_with_ref_scores(
    params: &ModelParams,
    query: &[u32],
    positive: &[u32],
    negative: &[u32],
    ref_positive_score: f64,
    ref_negative_score: f64,
    cfg: &RpoConfig,
) -> Result<f64, ModelError> {
    check_identifier(positive)?;
    check_identifier(negative)?;
    if positive == negative {
        return Err(ModelError::InvalidPair);
    }
    let s_p = score_identifier(params, query, positive)?;
    let s_n = score_identifier(params, query, negative)?;
    let margin = cfg.beta * (s_p - ref_positive_score - s_n + ref_negative_score);
    Ok(log_sigmoid_neg(margin) - cfg.alpha * s_p / positive.len() as f64)
}

/// Loss plus analytic gradient for one preference pair, accumulated into
/// `grads`. Returns the loss value.
pub fn rpo_grad_with_ref_scores(
    params: &ModelParams,
    query: &[u32],
    positive: &[u32],
    negative: &[u32],
    ref_positive_score: f64,
    ref_negative_score: f64,
    cfg: &RpoConfig,
    grads: &mut ModelParams,
) -> Result<f64, ModelError> {
    check_identifier(positive)?;
    check_identifier(negative)?;
    if positive == negative {
        return Err(ModelError::InvalidPair);
    }
    let mut seq_p = query.to_vec();
    seq_p.extend_from_slice(positive);
    let mut seq_n = query.to_vec();
    seq_n.extend_from_slice(negative);

    let fwd_p = forward(params, &seq_p)?;
    let fwd_n = forward(params, &seq_n)?;
    let s_p = fwd_p.span_logprob(query.len(), seq_p.len());
    let s_n = fwd_n.span_logprob(query.len(), seq_n.len());

    let margin = cfg.beta * (s_p - ref_positive_score - s_n + ref_negative_score);
    let loss = log_sigmoid_neg(margin) - cfg.alpha * s_p / positive.len() as f64;

    // d(loss)/d(s_p) and /d(s_n); the backward weight is the negation,
    // because `backward` differentiates Σ w_i·(−log p_i).
    let dmargin = -sigmoid(-margin);
    let d_sp = dmargin * cfg.beta - cfg.alpha / positive.len() as f64;
    let d_sn = -dmargin * cfg.beta;

    let mut w_p = vec![0.0; seq_p.len()];
    for w in w_p.iter_mut().skip(query.len()) {
        *w = -d_sp;
    }
    let mut w_n = vec![0.0; seq_n.len()];
    for w in w_n.iter_mut().skip(query.len()) {
        *w = -d_sn;
    }
    backward(params, &fwd_p, &w_p, grads);
    backward(params, &fwd_n, &w_n, grads);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Origin;
    use crate::model::{tiny_config, ModelConfig};

    fn ex(input: &[u32], target: &[u32]) -> TrainingExample {
        TrainingExample {
            input_tokens: input.to_vec(),
            target_tokens: target.to_vec(),
            origin: Origin::Query2id,
            unit_key: "u".into(),
        }
    }

    #[test]
    fn uniform_model_scores_are_minus_len_ln_v() {
        let cfg = ModelConfig { vocab: 10, dim: 6, layers: 1, heads: 2, context: 16 };
        let p = ModelParams::zeros(cfg);
        let score = score_identifier(&p, &[3, 4], &[5, 6, EOI]).unwrap();
        assert!((score - (-3.0 * 10f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn uniform_model_sft_loss_is_len_times_ln_v() {
        // |q| = 3, |d'| = 2, V = 10 → 5·ln 10 ≈ 11.5129.
        let cfg = ModelConfig { vocab: 10, dim: 6, layers: 1, heads: 2, context: 16 };
        let p = ModelParams::zeros(cfg);
        let loss = sft_loss(&p, &ex(&[3, 4, 5], &[6, EOI])).unwrap();
        assert!((loss - 5.0 * 10f64.ln()).abs() < 1e-9, "loss = {loss}");
    }

    #[test]
    fn deterministic_model_scores_its_own_output_at_zero() {
        // Build a model that deterministically emits [4, EOI]: zero
        // everything, then steer logits through the position embedding's
        // first coordinate. Its score on its own output is 0 (to within
        // the tail mass of the softmax).
        let cfg = tiny_config();
        let mut p = ModelParams::zeros(cfg);
        p.lnf_g.fill(1.0); // zeros() also clears the final norm gain
        p.pos_emb[[0, 0]] = 1.0;
        p.pos_emb[[1, 0]] = -1.0;
        p.w_out[[0, 4]] = 50.0; // favor token 4 where pos coord is +1
        p.w_out[[0, EOI as usize]] = -50.0; // favor EOI where it is -1
        let score = score_identifier(&p, &[], &[4, EOI]).unwrap();
        assert!(score.abs() < 1e-9, "score = {score}");
        let loss = sft_loss(&p, &ex(&[4], &[EOI])).unwrap();
        // Same sequence read as an SFT example: position 0 predicts 4,
        // position 1 predicts EOI, both near-certain.
        assert!(loss.abs() < 1e-9, "loss = {loss}");
    }

    #[test]
    fn score_equals_sum_of_logprob_positions() {
        let p = ModelParams::init(tiny_config(), 11);
        let q = [3u32, 7];
        let id = [5u32, 9, EOI];
        let score = score_identifier(&p, &q, &id).unwrap();
        let mut seq = q.to_vec();
        seq.extend_from_slice(&id);
        let lp = logprobs(&p, &seq).unwrap();
        let recomputed: f64 = (q.len()..seq.len()).map(|i| lp[[i, seq[i] as usize]]).sum();
        assert!((score - recomputed).abs() < 1e-12);
    }

    #[test]
    fn sft_loss_is_nonnegative_and_additive() {
        let p = ModelParams::init(tiny_config(), 2);
        let e = ex(&[3, 4, 5], &[6, EOI]);
        let loss = sft_loss(&p, &e).unwrap();
        assert!(loss > 0.0);
        let mut seq = e.input_tokens.clone();
        seq.extend_from_slice(&e.target_tokens);
        let lp = logprobs(&p, &seq).unwrap();
        let manual: f64 = seq.iter().enumerate().map(|(i, &t)| -lp[[i, t as usize]]).sum();
        assert!((loss - manual).abs() < 1e-12);
    }

    #[test]
    fn rpo_at_reference_equals_ln2_plus_alpha_term() {
        // θ = θ_ref makes every log-ratio cancel: the margin is 0 and the
        // loss is ln 2 + α·(−log P(d'_p|q)/|d'_p|), exactly.
        let cfg = ModelConfig { vocab: 10, dim: 6, layers: 1, heads: 2, context: 16 };
        let p = ModelParams::zeros(cfg);
        let reference = ReferenceModel::new(p.clone());
        let rpo_cfg = RpoConfig { beta: 0.5, alpha: 1.0, ..Default::default() };
        let loss = rpo_loss(&p, &reference, &[3], &[4, EOI], &[5, EOI], &rpo_cfg).unwrap();
        // Uniform model, |d'_p| = 2: ln 2 + (2 ln 10)/2 = ln 2 + ln 10.
        let expected = std::f64::consts::LN_2 + 10f64.ln();
        assert!((loss - expected).abs() < 1e-9, "loss = {loss}");

        // The identity holds for arbitrary (non-uniform) parameters too.
        let p2 = ModelParams::init(cfg, 99);
        let ref2 = ReferenceModel::new(p2.clone());
        let loss2 = rpo_loss(&p2, &ref2, &[3], &[4, EOI], &[5, EOI], &rpo_cfg).unwrap();
        let s_p = score_identifier(&p2, &[3], &[4, EOI]).unwrap();
        let expected2 = std::f64::consts::LN_2 + rpo_cfg.alpha * (-s_p) / 2.0;
        assert!((loss2 - expected2).abs() < 1e-9);
    }

    #[test]
    fn beta_to_zero_sends_preference_term_to_ln2() {
        let p = ModelParams::init(tiny_config(), 5);
        let reference = ReferenceModel::new(ModelParams::init(tiny_config(), 6));
        let cfg = RpoConfig { beta: 1e-12, alpha: 0.0, ..Default::default() };
        let loss = rpo_loss(&p, &reference, &[3], &[4, EOI], &[5, EOI], &cfg).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn identical_pair_is_rejected() {
        let p = ModelParams::init(tiny_config(), 5);
        let reference = ReferenceModel::new(p.clone());
        let err = rpo_loss(&p, &reference, &[3], &[4, EOI], &[4, EOI], &RpoConfig::default());
        assert!(matches!(err, Err(ModelError::InvalidPair)));
    }

    #[test]
    fn missing_eoi_is_rejected() {
        let p = ModelParams::init(tiny_config(), 5);
        assert!(matches!(
            score_identifier(&p, &[3], &[4, 5]),
            Err(ModelError::EmptyTarget)
        ));
        assert!(matches!(
            sft_loss(&p, &ex(&[3], &[])),
            Err(ModelError::EmptyTarget)
        ));
    }
}
