//! Epoch loop shared by `train` and `sweep`: seeded shuffling, batch
//! iterations, per-epoch evaluation, and firing-rate harvesting.

use rand::seq::SliceRandom;
use serde_json::json;
use ttlbp::encodings::Dataset;
use ttlbp::engine::{
    evaluate, harvest_firing_rates, lr_schedule, train_batch, Model, Sample, SparsityEstimate,
    TrainConfig,
};
use ttlbp::rng::{derive_seed, rng_from};
use ttlbp::topology::{init_weights, WeightSet};

use crate::{CliError, CliResult};

const SEED_TAG_EPOCH: u64 = 0x45504f43;

#[derive(Clone, Debug)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub block_losses: Vec<f64>,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// Wall-clock seconds; reported separately from the deterministic
    /// metrics.
    pub wall_s: f64,
}

#[derive(Debug)]
pub struct FitOutcome {
    pub weights: WeightSet,
    pub rows: Vec<EpochRow>,
    pub final_train_acc: f64,
    pub final_test_acc: Option<f64>,
    pub rates: SparsityEstimate,
}

/// Abort carrying a diagnostic snapshot for non-finite losses.
#[derive(Debug)]
pub struct FitAbort {
    pub message: String,
    pub diagnostic: serde_json::Value,
}

pub fn fit(
    model: &Model,
    config: &TrainConfig,
    dataset: &Dataset,
    epochs: usize,
) -> CliResult<Result<FitOutcome, FitAbort>> {
    let mut weights = init_weights(&model.arch, &model.plan, config.seed)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut rows = Vec::with_capacity(epochs);
    let data = &dataset.train;
    if data.is_empty() {
        return Err(CliError::Usage("dataset has no training samples".into()));
    }
    if epochs == 0 {
        return Err(CliError::Usage("epochs must be >= 1".into()));
    }
    for epoch in 0..epochs {
        let start = std::time::Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = rng_from(derive_seed(config.seed, SEED_TAG_EPOCH, &[epoch as u64]));
        order.shuffle(&mut rng);
        let mut losses = vec![0.0f64; model.num_blocks()];
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Sample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let outcome = train_batch(model, &mut weights, &batch, config, epoch, bi)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            if !outcome.all_finite() {
                return Ok(Err(FitAbort {
                    message: format!(
                        "non-finite loss at epoch {epoch}, batch {bi}: {:?}",
                        outcome.block_losses
                    ),
                    diagnostic: json!({
                        "epoch": epoch,
                        "batch": bi,
                        "block_losses": outcome.block_losses,
                        "learning_rate": lr_schedule(config, epoch),
                    }),
                }));
            }
            for (a, b) in losses.iter_mut().zip(outcome.block_losses.iter()) {
                *a += b;
            }
            batches += 1;
        }
        for l in losses.iter_mut() {
            *l /= batches as f64;
        }
        let train_acc = evaluate(model, &weights, data, config.time_steps)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let test_acc = if dataset.test.is_empty() {
            None
        } else {
            Some(
                evaluate(model, &weights, &dataset.test, config.time_steps)
                    .map_err(|e| CliError::Runtime(e.to_string()))?,
            )
        };
        rows.push(EpochRow {
            epoch,
            lr: lr_schedule(config, epoch),
            block_losses: losses,
            train_acc,
            test_acc,
            wall_s: start.elapsed().as_secs_f64(),
        });
    }
    let rates = harvest_firing_rates(model, &weights, data, config.time_steps)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let last = rows.last().expect("at least one epoch");
    Ok(Ok(FitOutcome {
        final_train_acc: last.train_acc,
        final_test_acc: last.test_acc,
        weights,
        rates,
        rows,
    }))
}
