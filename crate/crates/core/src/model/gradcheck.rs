//! Central finite-difference oracle for the analytic gradients.
//!
//! All arithmetic is f64, the loss is smooth (GELU, softmax, layer norm),
//! and the step is 1e-5, which keeps both truncation and round-off error
//! orders of magnitude below the 1e-4 acceptance bound on sub-1k-parameter
//! models.

use super::loss::{rpo_grad_with_ref_scores, sft_loss_and_grad};
use super::{ModelError, ModelParams, RpoConfig};
use crate::dataset::TrainingExample;

pub const FD_STEP: f64 = 1e-5;

/// Which objective to differentiate.
pub enum LossKind<'a> {
    Sft(&'a TrainingExample),
    Rpo {
        query: &'a [u32],
        positive: &'a [u32],
        negative: &'a [u32],
        ref_positive_score: f64,
        ref_negative_score: f64,
        cfg: &'a RpoConfig,
    },
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub params_checked: usize,
    pub max_rel_err: f64,
    /// Flat index of the worst parameter.
    pub worst_param: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

fn loss_of(params: &ModelParams, kind: &LossKind<'_>) -> Result<f64, ModelError> {
    match kind {
        LossKind::Sft(ex) => {
            let mut scratch = params.zeros_like();
            sft_loss_and_grad(params, ex, &mut scratch)
        }
        LossKind::Rpo { query, positive, negative, ref_positive_score, ref_negative_score, cfg } => {
            super::loss::rpo_loss_with_ref_scores(
                params,
                query,
                positive,
                negative,
                *ref_positive_score,
                *ref_negative_score,
                cfg,
            )
        }
    }
}

fn analytic_grad(params: &ModelParams, kind: &LossKind<'_>) -> Result<ModelParams, ModelError> {
    let mut grads = params.zeros_like();
    match kind {
        LossKind::Sft(ex) => {
            sft_loss_and_grad(params, ex, &mut grads)?;
        }
        LossKind::Rpo { query, positive, negative, ref_positive_score, ref_negative_score, cfg } => {
            rpo_grad_with_ref_scores(
                params,
                query,
                positive,
                negative,
                *ref_positive_score,
                *ref_negative_score,
                cfg,
                &mut grads,
            )?;
        }
    }
    Ok(grads)
}

/// Compare the analytic gradient of `kind` at `params` against central
/// finite differences over every parameter. Gradients whose analytic and
/// numeric magnitudes both fall below `1e-7` are treated as matching.
pub fn grad_check(params: &ModelParams, kind: LossKind<'_>) -> Result<GradCheckReport, ModelError> {
    if let LossKind::Sft(ex) = &kind {
        if ex.target_tokens.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
    }
    let analytic = analytic_grad(params, &kind)?;
    let n = params.param_count();
    let mut work = params.clone();
    let mut report = GradCheckReport {
        params_checked: n,
        max_rel_err: 0.0,
        worst_param: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for i in 0..n {
        let orig = work.get_flat(i);
        work.set_flat(i, orig + FD_STEP);
        let up = loss_of(&work, &kind)?;
        work.set_flat(i, orig - FD_STEP);
        let down = loss_of(&work, &kind)?;
        work.set_flat(i, orig);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic.get_flat(i);
        // Differences below the finite-difference noise floor count as a
        // match; the relative criterion only applies to resolvable
        // gradients.
        if (a - numeric).abs() < 1e-8 {
            continue;
        }
        let denom = a.abs().max(numeric.abs());
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}
