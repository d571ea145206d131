//! Batch training step, optimizer, schedule, and evaluation.

use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::topology::{ClassifierMode, WeightSet};

use super::{
    backward_interval, compute_loss, forward_interval, make_dropout_masks, split_intervals,
    GradSet, Model, NetState, Sample, TrainConfig,
};

const SEED_TAG_DROPOUT: u64 = 0x4d41534b;

/// Heavy-ball SGD: `v <- momentum*v + g; w <- w - lr*v`. Frozen-random
/// classifiers are never touched.
pub fn sgd_momentum_step(weights: &mut WeightSet, grads: &GradSet, lr: f64, momentum: f64) {
    for l in 0..weights.layers.len() {
        let (Some(w), Some(g)) = (weights.layers[l].as_mut(), grads.layers[l].as_ref()) else {
            continue;
        };
        let v = weights.layer_momentum[l].as_mut().expect("momentum buffer");
        for i in 0..v.len() {
            let vi = momentum * v.data()[i] + g.data()[i];
            v.data_mut()[i] = vi;
            w.data_mut()[i] -= lr * vi;
        }
    }
    if weights.classifier_mode == ClassifierMode::FrozenRandom {
        return;
    }
    for b in 0..weights.classifiers.len() {
        let w = &mut weights.classifiers[b];
        let g = &grads.classifiers[b];
        let v = weights.classifier_momentum[b]
            .as_mut()
            .expect("classifier momentum");
        for i in 0..v.len() {
            let vi = momentum * v.data()[i] + g.data()[i];
            v.data_mut()[i] = vi;
            w.data_mut()[i] -= lr * vi;
        }
    }
}

/// Step-decay learning rate for a given epoch.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    let periods = (epoch / cfg.lr_decay.every_epochs.max(1)) as i32;
    cfg.learning_rate * cfg.lr_decay.factor.powi(periods)
}

/// Per-block mean losses for one batch, averaged over intervals and samples.
#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub block_losses: Vec<f64>,
    pub intervals: usize,
}

impl BatchOutcome {
    pub fn all_finite(&self) -> bool {
        self.block_losses.iter().all(|l| l.is_finite())
    }
}

struct SampleResult {
    state: NetState,
    grads: GradSet,
    losses: Vec<f64>,
}

/// One batch iteration: for each truncation interval, run the batch forward
/// `k` steps (states carry across intervals), compute every block's loss,
/// run the backward recursion, and update weights once.
///
/// Neuron states reset between batches, never between intervals. Samples
/// run in parallel; gradients reduce in sample order, so the result is
/// identical for any worker-thread count.
pub fn train_batch(
    model: &Model,
    weights: &mut WeightSet,
    batch: &[Sample],
    cfg: &TrainConfig,
    epoch: usize,
    batch_index: usize,
) -> Result<BatchOutcome> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Contract("train_batch on empty batch".into()));
    }
    for s in batch {
        if s.label >= model.arch.num_classes {
            return Err(Error::Data(format!(
                "label {} out of range for {} classes",
                s.label, model.arch.num_classes
            )));
        }
    }
    let lr = lr_schedule(cfg, epoch);
    let num_blocks = model.num_blocks();
    let mut states: Vec<NetState> = (0..batch.len()).map(|_| NetState::reset(model)).collect();
    let mut block_losses = vec![0.0f64; num_blocks];
    let intervals = split_intervals(cfg.time_steps, cfg.k);

    let mut t0 = 0usize;
    for (iv, &k_actual) in intervals.iter().enumerate() {
        let mask_seed = derive_seed(
            cfg.seed,
            SEED_TAG_DROPOUT,
            &[epoch as u64, batch_index as u64, iv as u64],
        );
        let masks = make_dropout_masks(model, cfg.dropout_rate, mask_seed, batch.len())?;

        let results: Vec<Result<SampleResult>> = map_indexed(batch.len(), |b| {
            let mut state = states[b].clone();
            let hist = forward_interval(
                model,
                weights,
                &mut state,
                &batch[b].input,
                t0,
                k_actual,
                &masks[b],
            )?;
            let grads = backward_interval(model, weights, &hist, batch[b].label)?;
            let mut losses = Vec::with_capacity(num_blocks);
            for blk in 0..num_blocks {
                losses.push(compute_loss(&hist.classifier_spikes(blk), batch[b].label)?);
            }
            Ok(SampleResult {
                state,
                grads,
                losses,
            })
        });

        // Ordered reduction: deterministic for any thread count.
        let mut mean = GradSet::zeros_like(weights);
        let scale = 1.0 / batch.len() as f64;
        for (b, res) in results.into_iter().enumerate() {
            let res = res?;
            mean.add_scaled(&res.grads, scale)?;
            for blk in 0..num_blocks {
                block_losses[blk] += res.losses[blk] * scale / intervals.len() as f64;
            }
            states[b] = res.state;
        }
        sgd_momentum_step(weights, &mean, lr, cfg.momentum);
        t0 += k_actual;
    }

    Ok(BatchOutcome {
        block_losses,
        intervals: intervals.len(),
    })
}

/// Predicted class: argmax of the final block classifier's spike count over
/// the full window (lowest index wins ties). Dropout is off.
pub fn predict(model: &Model, weights: &WeightSet, sample: &Sample, time_steps: usize) -> Result<usize> {
    let masks = super::DropoutMasks::ones(model);
    let mut state = NetState::reset(model);
    let last = model.num_blocks() - 1;
    let mut counts = vec![0.0f64; model.arch.num_classes];
    for t in 0..time_steps {
        let x = sample.input.at(t).into_owned();
        super::forward_step(model, weights, &mut state, &x, &masks)?;
        for (c, s) in counts.iter_mut().zip(state.classifiers[last].s.data()) {
            *c += s;
        }
    }
    let mut best = 0usize;
    for i in 1..counts.len() {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Classification accuracy over a sample set.
pub fn evaluate(
    model: &Model,
    weights: &WeightSet,
    samples: &[Sample],
    time_steps: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("evaluate on empty sample set".into()));
    }
    let hits: Vec<Result<bool>> = map_indexed(samples.len(), |i| {
        Ok(predict(model, weights, &samples[i], time_steps)? == samples[i].label)
    });
    let mut correct = 0usize;
    for h in hits {
        if h? {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Mean firing rates harvested from a forward run, in the shape the cost
/// model consumes: input sparsity per layer and per-block classifier input
/// sparsity.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SparsityEstimate {
    /// `per_layer_input[l]`: nonzero fraction of what layer `l` consumes
    /// (the image for layer 0, spikes of `l-1` otherwise).
    pub per_layer_input: Vec<f64>,
    /// Nonzero fraction of each block classifier's flattened input.
    pub per_block_classifier_input: Vec<f64>,
}

pub fn harvest_firing_rates(
    model: &Model,
    weights: &WeightSet,
    samples: &[Sample],
    time_steps: usize,
) -> Result<SparsityEstimate> {
    if samples.is_empty() {
        return Err(Error::Contract("harvest on empty sample set".into()));
    }
    let masks = super::DropoutMasks::ones(model);
    let mut layer_nonzero = vec![0.0f64; model.num_layers()];
    let mut layer_total = vec![0.0f64; model.num_layers()];
    let mut cls_nonzero = vec![0.0f64; model.num_blocks()];
    let mut cls_total = vec![0.0f64; model.num_blocks()];
    for sample in samples {
        let mut state = NetState::reset(model);
        for t in 0..time_steps {
            let x = sample.input.at(t).into_owned();
            super::forward_step(model, weights, &mut state, &x, &masks)?;
            for l in 0..model.num_layers() {
                let src: &Tensor = if l == 0 {
                    &x
                } else {
                    &state.layers[l - 1].s
                };
                layer_nonzero[l] += src.data().iter().filter(|&&v| v != 0.0).count() as f64;
                layer_total[l] += src.len() as f64;
            }
            for b in 0..model.num_blocks() {
                let top = &state.layers[model.plan.classifier_at(b)].s;
                cls_nonzero[b] += top.data().iter().filter(|&&v| v != 0.0).count() as f64;
                cls_total[b] += top.len() as f64;
            }
        }
    }
    Ok(SparsityEstimate {
        per_layer_input: layer_nonzero
            .iter()
            .zip(layer_total.iter())
            .map(|(&n, &t)| n / t)
            .collect(),
        per_block_classifier_input: cls_nonzero
            .iter()
            .zip(cls_total.iter())
            .map(|(&n, &t)| n / t)
            .collect(),
    })
}
