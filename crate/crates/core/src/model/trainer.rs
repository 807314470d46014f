use serde::{Deserialize, Serialize};

use super::{adam_step, loss_and_grad, AdamState, DropoutMasks, Hyper, ModelError, ModelParams};
use crate::data::{make_batches, ClientShard};
use crate::rng::{derive, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochStats {
    pub batches: usize,
    /// Mean total loss over the epoch's batches, measured before each step.
    pub mean_loss: f64,
}

/// One pass of mini-batch Adam over the shard's training split.
///
/// Batch order comes from `(seed, epoch)`; dropout masks come from a separate
/// stream of the same pair, so an epoch is a pure function of its inputs.
pub fn train_epoch(
    params: &mut ModelParams,
    opt: &mut AdamState,
    shard: &ClientShard,
    hyper: &Hyper,
    seed: u64,
    epoch: u64,
) -> Result<EpochStats, ModelError> {
    let mut dropout_rng = seeded(derive(&[seed, epoch]), 1);
    let mut stats = EpochStats::default();
    let mut loss_sum = 0.0;
    for batch in make_batches(shard, hyper.batch_size, seed, epoch) {
        let masks = (hyper.dropout_rate > 0.0).then(|| {
            DropoutMasks::sample(batch.len(), params.rank, params.num_entities(), hyper.dropout_rate, &mut dropout_rng)
        });
        let (loss, grads) = loss_and_grad(params, &batch, hyper, masks.as_ref())?;
        adam_step(opt, params, &grads, hyper.lr)?;
        loss_sum += loss.total;
        stats.batches += 1;
    }
    if stats.batches > 0 {
        stats.mean_loss = loss_sum / stats.batches as f64;
    }
    Ok(stats)
}
