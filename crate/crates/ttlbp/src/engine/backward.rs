//! Reverse error recursions over one truncation interval.
//!
//! Iterating time from the interval end down to its start and layers
//! top-to-bottom within each block:
//!
//! ```text
//! delta[t,n] = W[n+1]^T gamma[t,n+1]  -  theta * gamma[t+1,n]
//! gamma[t,n] = delta[t,n] * surrogate'(u[t,n])  +  tau * gamma[t+1,n]
//! dW[n]     += gamma[t,n] (x) source[t,n-1]
//! ```
//!
//! No error crosses a block boundary (each block's spatial chain starts at
//! its own classifier) and no error crosses the interval start (`gamma`
//! beyond the interval end is zero).

use crate::error::{Error, Result};
use crate::layers::{
    avgpool_backprop_input, conv_backprop_input, conv_weight_grad, fc_backprop_input,
    fc_weight_grad,
};
use crate::neuron::surrogate_grad;
use crate::tensor::Tensor;
use crate::topology::{flat_len, LayerKind, WeightSet};

use super::{classifier_seed_error, GradSet, IntervalHistory, Model};

/// Spike errors (`delta = dL/ds`) and potential errors (`gamma = dL/du`)
/// for every layer and classifier at one time step. Layers in blocks whose
/// loss is inactive hold exact zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorState {
    pub delta: Vec<Tensor>,
    pub gamma: Vec<Tensor>,
    pub delta_c: Vec<Tensor>,
    pub gamma_c: Vec<Tensor>,
}

impl ErrorState {
    pub fn zeros(model: &Model) -> ErrorState {
        ErrorState {
            delta: model.shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            gamma: model.shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            delta_c: (0..model.num_blocks())
                .map(|_| Tensor::zeros(&[model.arch.num_classes]))
                .collect(),
            gamma_c: (0..model.num_blocks())
                .map(|_| Tensor::zeros(&[model.arch.num_classes]))
                .collect(),
        }
    }
}

/// Gradient of layer `upper`'s synaptic input in its (masked) source.
fn spatial_backprop(
    model: &Model,
    weights: &WeightSet,
    upper: usize,
    gamma_upper: &Tensor,
) -> Tensor {
    let spec = &model.arch.layers[upper];
    let in_shape = model.layer_input_shape(upper);
    match spec.kind {
        LayerKind::Conv => conv_backprop_input(
            gamma_upper,
            weights.layers[upper].as_ref().expect("conv weights"),
            in_shape,
            spec.stride.unwrap(),
        ),
        LayerKind::AvgPool => {
            avgpool_backprop_input(gamma_upper, in_shape, spec.kernel.unwrap(), spec.stride.unwrap())
        }
        LayerKind::FullyConnected => fc_backprop_input(
            gamma_upper,
            weights.layers[upper].as_ref().expect("fc weights"),
            in_shape,
        ),
    }
}

fn accumulate_weight_grad(
    model: &Model,
    grads: &mut GradSet,
    l: usize,
    gamma_l: &Tensor,
    source: &Tensor,
) {
    let spec = &model.arch.layers[l];
    let grad = match spec.kind {
        LayerKind::Conv => {
            conv_weight_grad(gamma_l, source, spec.kernel.unwrap(), spec.stride.unwrap())
        }
        LayerKind::FullyConnected => {
            let flat = source
                .reshaped(&[flat_len(source.shape())])
                .expect("flatten source");
            fc_weight_grad(gamma_l, &flat)
        }
        LayerKind::AvgPool => return,
    };
    grads.layers[l]
        .as_mut()
        .expect("trainable layer grad slot")
        .add_scaled(&grad, 1.0)
        .expect("grad shape");
}

/// Backward pass over a recorded interval, all block losses active.
pub fn backward_interval(
    model: &Model,
    weights: &WeightSet,
    history: &IntervalHistory,
    target: usize,
) -> Result<GradSet> {
    let active = vec![true; model.num_blocks()];
    backward_interval_filtered(model, weights, history, target, &active)
}

/// Backward pass with per-block loss gating: blocks whose entry is `false`
/// contribute no error anywhere (their gradients stay exactly zero).
pub fn backward_interval_filtered(
    model: &Model,
    weights: &WeightSet,
    history: &IntervalHistory,
    target: usize,
    active_blocks: &[bool],
) -> Result<GradSet> {
    let (grads, _) = backward_interval_impl(model, weights, history, target, active_blocks, false)?;
    Ok(grads)
}

/// Like [`backward_interval_filtered`], also returning the per-step error
/// states (index 0 = interval start).
pub fn backward_interval_traced(
    model: &Model,
    weights: &WeightSet,
    history: &IntervalHistory,
    target: usize,
    active_blocks: &[bool],
) -> Result<(GradSet, Vec<ErrorState>)> {
    let (grads, trace) =
        backward_interval_impl(model, weights, history, target, active_blocks, true)?;
    Ok((grads, trace))
}

fn backward_interval_impl(
    model: &Model,
    weights: &WeightSet,
    history: &IntervalHistory,
    target: usize,
    active_blocks: &[bool],
    keep_trace: bool,
) -> Result<(GradSet, Vec<ErrorState>)> {
    let k = history.k_actual();
    if k == 0 {
        return Err(Error::Contract("backward_interval on empty history".into()));
    }
    if active_blocks.len() != model.num_blocks() {
        return Err(Error::Contract(format!(
            "active_blocks length {} != block count {}",
            active_blocks.len(),
            model.num_blocks()
        )));
    }

    // Loss seeds are constant across the interval (mean-rate loss), one per
    // active block.
    let mut seeds: Vec<Option<Tensor>> = Vec::with_capacity(model.num_blocks());
    for b in 0..model.num_blocks() {
        if active_blocks[b] {
            seeds.push(Some(classifier_seed_error(
                &history.classifier_spikes(b),
                target,
            )?));
        } else {
            seeds.push(None);
        }
    }

    let mut grads = GradSet::zeros_like(weights);
    let mut next = ErrorState::zeros(model); // gamma beyond the interval end is zero
    let mut trace: Vec<ErrorState> = Vec::new();

    for t in (0..k).rev() {
        let step = history
            .steps
            .get(t)
            .ok_or_else(|| Error::Contract(format!("missing history step {t}")))?;
        let mut cur = ErrorState::zeros(model);

        for b in 0..model.num_blocks() {
            let Some(seed) = seeds[b].as_ref() else {
                continue;
            };
            let block = model.plan.blocks[b];
            let top = model.plan.classifier_at(b);

            // Classifier: it is "layer n+1" local to the block.
            let mut delta_c = seed.clone();
            delta_c.add_scaled(&next.gamma_c[b], -model.lif.theta)?;
            let mut gamma_c = delta_c.zip_map(
                &surrogate_grad(&step.classifiers[b].u, &model.lif)?,
                |d, g| d * g,
            )?;
            gamma_c.add_scaled(&next.gamma_c[b], model.lif.tau)?;
            let top_spikes = history.masked_spikes(t, top);
            let top_flat = top_spikes.reshaped(&[flat_len(top_spikes.shape())])?;
            grads.classifiers[b].add_scaled(&fc_weight_grad(&gamma_c, &top_flat), 1.0)?;

            // Layers top-to-bottom within the block.
            for l in block.layer_indices().rev() {
                let spatial = if l == top {
                    fc_backprop_input(&gamma_c, &weights.classifiers[b], &model.shapes[l])
                } else {
                    spatial_backprop(model, weights, l + 1, &cur.gamma[l + 1])
                };
                // Dropout gates the spatial path only; the reset term uses
                // raw spikes.
                let mut delta = match &history.masks.per_layer[l] {
                    Some(m) => spatial.zip_map(m, |a, b| a * b)?,
                    None => spatial,
                };
                delta.add_scaled(&next.gamma[l], -model.lif.theta)?;
                let mut gamma = delta.zip_map(
                    &surrogate_grad(&step.layers[l].u, &model.lif)?,
                    |d, g| d * g,
                )?;
                gamma.add_scaled(&next.gamma[l], model.lif.tau)?;

                if model.arch.layers[l].kind.is_trainable() {
                    let source = if l == 0 {
                        history.inputs[t].clone()
                    } else {
                        history.masked_spikes(t, l - 1)
                    };
                    accumulate_weight_grad(model, &mut grads, l, &gamma, &source);
                }

                cur.delta[l] = delta;
                cur.gamma[l] = gamma;
            }

            cur.delta_c[b] = delta_c;
            cur.gamma_c[b] = gamma_c;
        }

        if keep_trace {
            trace.push(cur.clone());
        }
        next = cur;
    }

    trace.reverse();
    Ok((grads, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{forward_interval, DropoutMasks, NetState, StepInputs};
    use crate::neuron::LifParams;
    use crate::topology::{init_weights, partition_blocks, LayerSpec, NetworkArch};

    fn two_block_model() -> (Model, WeightSet) {
        let arch = NetworkArch {
            input_shape: [1, 1, 3],
            layers: vec![
                LayerSpec::fully_connected(4),
                LayerSpec::fully_connected(3),
            ],
            num_classes: 2,
        };
        let plan = partition_blocks(&arch, 1).unwrap();
        let model = Model::new(arch, plan, LifParams::with_threshold(0.9, 0.4, 0.5)).unwrap();
        let ws = init_weights(&model.arch, &model.plan, 21).unwrap();
        (model, ws)
    }

    fn run_history(model: &Model, ws: &WeightSet, k: usize) -> IntervalHistory {
        let mut state = NetState::reset(model);
        let masks = DropoutMasks::ones(model);
        let input = StepInputs::Static(
            Tensor::from_vec(&[1, 1, 3], vec![0.9, 0.4, 0.7]).unwrap(),
        );
        forward_interval(model, ws, &mut state, &input, 0, k, &masks).unwrap()
    }

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let (model, ws) = two_block_model();
        let hist = run_history(&model, &ws, 4);
        let grads =
            backward_interval_filtered(&model, &ws, &hist, 0, &[false, false]).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn inactive_block_contributes_exact_zeros() {
        let (model, ws) = two_block_model();
        let hist = run_history(&model, &ws, 4);
        let only_top =
            backward_interval_filtered(&model, &ws, &hist, 0, &[false, true]).unwrap();
        // Block 0's layer gradient must be exactly zero: no error crosses
        // the block boundary downward.
        assert_eq!(only_top.layers[0].as_ref().unwrap().max_abs(), 0.0);
        assert_eq!(only_top.classifiers[0].max_abs(), 0.0);

        let only_bottom =
            backward_interval_filtered(&model, &ws, &hist, 0, &[true, false]).unwrap();
        assert_eq!(only_bottom.layers[1].as_ref().unwrap().max_abs(), 0.0);
        assert_eq!(only_bottom.classifiers[1].max_abs(), 0.0);
    }

    #[test]
    fn filtered_blocks_compose_additively() {
        let (model, ws) = two_block_model();
        let hist = run_history(&model, &ws, 4);
        let all = backward_interval(&model, &ws, &hist, 1).unwrap();
        let a = backward_interval_filtered(&model, &ws, &hist, 1, &[true, false]).unwrap();
        let mut b = backward_interval_filtered(&model, &ws, &hist, 1, &[false, true]).unwrap();
        b.add_scaled(&a, 1.0).unwrap();
        for (x, y) in all.layers.iter().zip(b.layers.iter()) {
            assert_eq!(x, y);
        }
        for (x, y) in all.classifiers.iter().zip(b.classifiers.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn traced_errors_stay_zero_in_inactive_blocks() {
        let (model, ws) = two_block_model();
        let hist = run_history(&model, &ws, 3);
        let (_, trace) =
            backward_interval_traced(&model, &ws, &hist, 0, &[false, true]).unwrap();
        assert_eq!(trace.len(), 3);
        for es in &trace {
            assert_eq!(es.delta[0].max_abs(), 0.0);
            assert_eq!(es.gamma[0].max_abs(), 0.0);
            assert_eq!(es.delta_c[0].max_abs(), 0.0);
        }
    }

    #[test]
    fn empty_history_is_a_contract_violation() {
        let (model, ws) = two_block_model();
        let hist = IntervalHistory {
            inputs: vec![],
            steps: vec![],
            masks: DropoutMasks::ones(&model),
        };
        assert!(matches!(
            backward_interval(&model, &ws, &hist, 0),
            Err(Error::Contract(_))
        ));
    }
}
