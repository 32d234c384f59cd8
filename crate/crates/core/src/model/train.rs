//! Training loops for both stages. Given a seed, every run is bit-for-bit
//! reproducible: initialization, shuffling, and gradient accumulation all
//! follow fixed orders.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::loss::{rpo_grad_with_ref_scores, score_identifier, sft_loss_and_grad};
use super::optim::{clip_global_norm, warmup_lr, Adam};
use super::{ModelConfig, ModelError, ModelParams, ReferenceModel, RpoConfig, SftConfig};
use crate::dataset::TrainingExample;

/// Gradient accumulation is sharded into a fixed number of partial sums so
/// shards can run in parallel without the result depending on how many
/// threads happen to exist.
const ACCUM_SHARDS: usize = 4;

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub examples: usize,
}

/// One preference-training item, fully tokenized.
#[derive(Debug, Clone)]
pub struct RpoExample {
    pub query_tokens: Vec<u32>,
    pub positive_tokens: Vec<u32>,
    pub negative_tokens: Vec<u32>,
}

fn check_finite(loss: f64, at: &str) -> Result<(), ModelError> {
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss { at: at.to_string(), value: loss });
    }
    Ok(())
}

/// Sum per-example gradients over `items` into fixed shards (parallel but
/// deterministic), returning summed gradients and summed loss.
fn accumulate<T: Sync>(
    params: &ModelParams,
    items: &[T],
    per_item: &(impl Fn(&ModelParams, &T, &mut ModelParams) -> Result<f64, ModelError> + Sync),
) -> Result<(ModelParams, f64), ModelError> {
    let shard_size = items.len().div_ceil(ACCUM_SHARDS).max(1);
    let partials: Result<Vec<(ModelParams, f64)>, ModelError> = items
        .par_chunks(shard_size)
        .map(|shard| {
            let mut grads = params.zeros_like();
            let mut loss_sum = 0.0;
            for item in shard {
                loss_sum += per_item(params, item, &mut grads)?;
            }
            Ok((grads, loss_sum))
        })
        .collect();
    let partials = partials?;
    let mut grads = params.zeros_like();
    let mut loss_sum = 0.0;
    for (g, l) in partials {
        grads.add_scaled(&g, 1.0);
        loss_sum += l;
    }
    Ok((grads, loss_sum))
}

#[allow(clippy::too_many_arguments)]
fn run_epochs<T: Clone + Sync>(
    mut params: ModelParams,
    data: &[T],
    epochs: usize,
    batch: usize,
    base_lr: f64,
    warmup_ratio: f64,
    seed: u64,
    per_item: impl Fn(&ModelParams, &T, &mut ModelParams) -> Result<f64, ModelError> + Sync,
    mut on_epoch: impl FnMut(&ModelParams, &EpochStats) -> Result<(), ModelError>,
) -> Result<ModelParams, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let batch = batch.max(1);
    let steps_per_epoch = data.len().div_ceil(batch);
    let total_steps = (epochs * steps_per_epoch) as u64;
    let warmup_steps = ((total_steps as f64) * warmup_ratio).round() as u64;
    let mut opt = Adam::new(&params);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut step = 0u64;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch_ids in order.chunks(batch) {
            let items: Vec<T> = batch_ids.iter().map(|&i| data[i].clone()).collect();
            let (mut grads, loss_sum) = accumulate(&params, &items, &per_item)?;
            check_finite(loss_sum, &format!("epoch {epoch} step {step}"))?;
            epoch_loss += loss_sum;
            // Mean over examples; per-example losses sum over positions.
            grads.scale(1.0 / items.len() as f64);
            clip_global_norm(&mut grads, opt.clip_norm);
            let lr = warmup_lr(base_lr, step, warmup_steps);
            opt.step(&mut params, &grads, lr);
            step += 1;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: epoch_loss / data.len() as f64,
            examples: data.len(),
        };
        on_epoch(&params, &stats)?;
    }
    Ok(params)
}

/// Supervised fine-tuning from a fresh initialization. `on_epoch` fires
/// after every epoch (checkpointing hooks in there).
pub fn train_sft(
    cfg: ModelConfig,
    data: &[TrainingExample],
    scfg: &SftConfig,
    on_epoch: impl FnMut(&ModelParams, &EpochStats) -> Result<(), ModelError>,
) -> Result<ModelParams, ModelError> {
    let params = ModelParams::init(cfg, scfg.seed);
    run_epochs(
        params,
        data,
        scfg.epochs,
        scfg.batch,
        scfg.lr,
        scfg.warmup_ratio,
        scfg.seed,
        |p, ex, grads| sft_loss_and_grad(p, ex, grads),
        on_epoch,
    )
}

/// Preference training from an SFT checkpoint against its frozen copy.
/// Reference scores are computed once per pair up front.
pub fn train_rpo(
    init: ModelParams,
    reference: &ReferenceModel,
    pairs: &[RpoExample],
    rcfg: &RpoConfig,
    on_epoch: impl FnMut(&ModelParams, &EpochStats) -> Result<(), ModelError>,
) -> Result<ModelParams, ModelError> {
    if pairs.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let prepared: Result<Vec<(RpoExample, f64, f64)>, ModelError> = pairs
        .par_iter()
        .map(|p| {
            let ref_p = score_identifier(reference.params(), &p.query_tokens, &p.positive_tokens)?;
            let ref_n = score_identifier(reference.params(), &p.query_tokens, &p.negative_tokens)?;
            Ok((p.clone(), ref_p, ref_n))
        })
        .collect();
    let prepared = prepared?;
    let cfg = *rcfg;
    run_epochs(
        init,
        &prepared,
        rcfg.epochs,
        rcfg.batch,
        rcfg.lr,
        0.0,
        rcfg.seed,
        move |params, (pair, ref_p, ref_n), grads| {
            rpo_grad_with_ref_scores(
                params,
                &pair.query_tokens,
                &pair.positive_tokens,
                &pair.negative_tokens,
                *ref_p,
                *ref_n,
                &cfg,
                grads,
            )
        },
        on_epoch,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EOI;
    use crate::dataset::Origin;
    use crate::model::loss::sft_loss;
    use crate::model::tiny_config;

    fn ex(input: &[u32], target: &[u32]) -> TrainingExample {
        TrainingExample {
            input_tokens: input.to_vec(),
            target_tokens: target.to_vec(),
            origin: Origin::Query2id,
            unit_key: "u".into(),
        }
    }

    #[test]
    fn single_example_overfits() {
        let example = ex(&[3, 7], &[9, EOI]);
        let scfg = SftConfig { lr: 5e-3, epochs: 120, warmup_ratio: 0.1, batch: 1, seed: 4 };
        let mut first = None;
        let mut last = 0.0;
        let trained = train_sft(tiny_config(), &[example.clone()], &scfg, |_, stats| {
            first.get_or_insert(stats.mean_loss);
            last = stats.mean_loss;
            Ok(())
        })
        .unwrap();
        let final_loss = sft_loss(&trained, &example).unwrap();
        assert!(final_loss < 0.1, "final loss {final_loss}");
        assert!(last < first.unwrap(), "loss should fall: {first:?} -> {last}");
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let data: Vec<TrainingExample> =
            (0..6).map(|i| ex(&[3 + i, 4], &[5 + i % 3, EOI])).collect();
        let scfg = SftConfig { lr: 1e-3, epochs: 3, warmup_ratio: 0.1, batch: 2, seed: 11 };
        let a = train_sft(tiny_config(), &data, &scfg, |_, _| Ok(())).unwrap();
        let b = train_sft(tiny_config(), &data, &scfg, |_, _| Ok(())).unwrap();
        assert_eq!(a.tok_emb, b.tok_emb);
        assert_eq!(a.w_out, b.w_out);
        assert_eq!(a.layers[0].w_up, b.layers[0].w_up);
        let c = train_sft(
            tiny_config(),
            &data,
            &SftConfig { seed: 12, ..scfg },
            |_, _| Ok(()),
        )
        .unwrap();
        assert_ne!(a.tok_emb, c.tok_emb);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let scfg = SftConfig::default();
        assert!(matches!(
            train_sft(tiny_config(), &[], &scfg, |_, _| Ok(())),
            Err(ModelError::EmptyDataset)
        ));
    }

    #[test]
    fn rpo_training_shifts_preference_toward_the_positive() {
        let base = ModelParams::init(tiny_config(), 31);
        let reference = ReferenceModel::new(base.clone());
        let pair = RpoExample {
            query_tokens: vec![3, 7],
            positive_tokens: vec![9, EOI],
            negative_tokens: vec![4, EOI],
        };
        let rcfg = RpoConfig { beta: 0.5, alpha: 1.0, lr: 1e-3, epochs: 30, batch: 1, seed: 0 };
        let trained = train_rpo(base.clone(), &reference, &[pair.clone()], &rcfg, |_, _| Ok(())).unwrap();
        let before_p = score_identifier(&base, &pair.query_tokens, &pair.positive_tokens).unwrap();
        let after_p = score_identifier(&trained, &pair.query_tokens, &pair.positive_tokens).unwrap();
        let before_gap = before_p
            - score_identifier(&base, &pair.query_tokens, &pair.negative_tokens).unwrap();
        let after_gap = after_p
            - score_identifier(&trained, &pair.query_tokens, &pair.negative_tokens).unwrap();
        assert!(after_p > before_p, "positive likelihood should rise");
        assert!(after_gap > before_gap, "preference margin should widen");
    }
}
