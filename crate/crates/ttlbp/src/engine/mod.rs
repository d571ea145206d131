//! Training engine: interval-wise forward simulation, per-block losses,
//! explicit backward recursions, gradient accumulation, and SGD updates.
//!
//! Time is simulated in truncation intervals of length `k`. Forward state
//! (potentials and spikes) persists across interval boundaries; only the
//! gradient path is cut there. Within an interval every layer and every
//! block classifier advances one LIF step per time step; the recorded
//! history feeds the backward pass, and weights are updated once per
//! interval.

mod backward;
mod oracle;
mod train;

pub use backward::{
    backward_interval, backward_interval_filtered, backward_interval_traced, ErrorState,
};
pub use oracle::{oracle_bptt_grad, oracle_interval_grad};
pub use train::{
    evaluate, harvest_firing_rates, lr_schedule, predict, sgd_momentum_step, train_batch,
    BatchOutcome, SparsityEstimate,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{avgpool_forward, conv_forward, fc_forward};
use crate::neuron::{lif_step, reset_state, LayerState, LifParams};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;
use crate::topology::{
    flat_len, infer_shapes, BlockPlan, ClassifierMode, LayerKind, NetworkArch, WeightSet,
};

/// Step-decay schedule: `lr0 * factor^(epoch / every_epochs)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub factor: f64,
    pub every_epochs: usize,
}

impl Default for LrDecay {
    fn default() -> Self {
        // Halve every 20 epochs.
        LrDecay {
            factor: 0.5,
            every_epochs: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Truncation interval length in steps; the last interval may be shorter.
    pub k: usize,
    /// Trainable layers per local block.
    pub n: usize,
    /// Total simulated time steps per sample.
    pub time_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub dropout_rate: f64,
    pub lr_decay: LrDecay,
    pub lif: LifParams,
    pub classifier_mode: ClassifierMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 10,
            n: 1,
            time_steps: 10,
            batch_size: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            dropout_rate: 0.0,
            lr_decay: LrDecay::default(),
            lif: LifParams::default(),
            classifier_mode: ClassifierMode::Trainable,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.time_steps {
            return Err(Error::Config(format!(
                "k={} must satisfy 1 <= k <= T={}",
                self.k, self.time_steps
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} must be in [0, 1)",
                self.dropout_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} must be in [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.lif.validate()
    }

    /// Interval lengths covering `time_steps` in chunks of `k`.
    pub fn interval_lengths(&self) -> Vec<usize> {
        split_intervals(self.time_steps, self.k)
    }
}

pub fn split_intervals(time_steps: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut left = time_steps;
    while left > 0 {
        let len = left.min(k);
        out.push(len);
        left -= len;
    }
    out
}

/// Architecture + block plan + inferred shapes + neuron parameters,
/// validated once and shared read-only.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: NetworkArch,
    pub plan: BlockPlan,
    pub shapes: Vec<Vec<usize>>,
    pub lif: LifParams,
}

impl Model {
    pub fn new(arch: NetworkArch, plan: BlockPlan, lif: LifParams) -> Result<Self> {
        arch.validate()?;
        lif.validate()?;
        let shapes = infer_shapes(&arch)?;
        Ok(Model {
            arch,
            plan,
            shapes,
            lif,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.arch.layers.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.plan.num_blocks()
    }

    pub fn layer_input_shape(&self, l: usize) -> &[usize] {
        if l == 0 {
            &self.arch.input_shape
        } else {
            &self.shapes[l - 1]
        }
    }

    /// Block index whose classifier sits on layer `l`, if any.
    pub fn block_ending_at(&self, l: usize) -> Option<usize> {
        (0..self.num_blocks()).find(|&b| self.plan.classifier_at(b) == l)
    }
}

/// Per-sample network state: one LIF state per layer plus one per block
/// classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct NetState {
    pub layers: Vec<LayerState>,
    pub classifiers: Vec<LayerState>,
}

impl NetState {
    pub fn reset(model: &Model) -> NetState {
        NetState {
            layers: model.shapes.iter().map(|s| reset_state(s)).collect(),
            classifiers: (0..model.num_blocks())
                .map(|_| reset_state(&[model.arch.num_classes]))
                .collect(),
        }
    }
}

/// Input source for the first layer across time.
#[derive(Clone, Debug, PartialEq)]
pub enum StepInputs {
    /// Direct encoding: the same real-valued tensor at every step.
    Static(Tensor),
    /// Frame sequence (e.g. converted DVS events); zero frames past the end.
    Sequence(Vec<Tensor>),
}

impl StepInputs {
    pub fn shape(&self) -> &[usize] {
        match self {
            StepInputs::Static(t) => t.shape(),
            StepInputs::Sequence(frames) => frames[0].shape(),
        }
    }

    pub fn at(&self, t: usize) -> std::borrow::Cow<'_, Tensor> {
        match self {
            StepInputs::Static(t0) => std::borrow::Cow::Borrowed(t0),
            StepInputs::Sequence(frames) => match frames.get(t) {
                Some(f) => std::borrow::Cow::Borrowed(f),
                None => std::borrow::Cow::Owned(Tensor::zeros(frames[0].shape())),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: StepInputs,
    pub label: usize,
}

/// One dropout mask per layer, `None` where no mask applies (pool layers).
/// Masks hold `0` or `1/(1-rate)` and stay fixed across an interval.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    pub per_layer: Vec<Option<Tensor>>,
}

impl DropoutMasks {
    /// All-ones masks (training with rate 0, or evaluation).
    pub fn ones(model: &Model) -> DropoutMasks {
        DropoutMasks {
            per_layer: model
                .arch
                .layers
                .iter()
                .enumerate()
                .map(|(l, spec)| {
                    spec.kind
                        .is_trainable()
                        .then(|| Tensor::full(&model.shapes[l], 1.0))
                })
                .collect(),
        }
    }
}

/// Bernoulli(1-rate) masks scaled by `1/(1-rate)` for every Conv/FC layer,
/// one set per batch sample, sampled once per interval.
pub fn make_dropout_masks(
    model: &Model,
    rate: f64,
    seed: u64,
    batch: usize,
) -> Result<Vec<DropoutMasks>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate {rate} must be in [0, 1)"
        )));
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Ok((0..batch)
        .map(|b| {
            let mut per_layer = Vec::with_capacity(model.num_layers());
            for (l, spec) in model.arch.layers.iter().enumerate() {
                if !spec.kind.is_trainable() {
                    per_layer.push(None);
                    continue;
                }
                if rate == 0.0 {
                    per_layer.push(Some(Tensor::full(&model.shapes[l], 1.0)));
                    continue;
                }
                let mut rng = rng_from(derive_seed(seed, 0x44524f50, &[b as u64, l as u64]));
                let len = flat_len(&model.shapes[l]);
                let data = (0..len)
                    .map(|_| {
                        use rand::Rng;
                        if rng.gen::<f64>() < keep {
                            scale
                        } else {
                            0.0
                        }
                    })
                    .collect();
                per_layer.push(Some(Tensor::from_vec(&model.shapes[l], data).unwrap()));
            }
            DropoutMasks { per_layer }
        })
        .collect())
}

/// Recorded forward history for one sample over one truncation interval.
#[derive(Clone, Debug)]
pub struct IntervalHistory {
    /// First-layer synaptic source per step (real-valued, direct encoding).
    pub inputs: Vec<Tensor>,
    /// Full network state after each step.
    pub steps: Vec<NetState>,
    pub masks: DropoutMasks,
}

impl IntervalHistory {
    pub fn k_actual(&self) -> usize {
        self.steps.len()
    }

    /// Spikes of layer `l` at local step `t`, dropout applied.
    pub fn masked_spikes(&self, t: usize, l: usize) -> Tensor {
        let s = &self.steps[t].layers[l].s;
        match &self.masks.per_layer[l] {
            Some(m) => s.zip_map(m, |a, b| a * b).expect("mask shape"),
            None => s.clone(),
        }
    }

    /// Spike trace of block `b`'s classifier across the interval.
    pub fn classifier_spikes(&self, b: usize) -> Vec<&Tensor> {
        self.steps.iter().map(|st| &st.classifiers[b].s).collect()
    }
}

fn apply_masked(s: &Tensor, mask: Option<&Tensor>) -> Tensor {
    match mask {
        Some(m) => s.zip_map(m, |a, b| a * b).expect("mask shape"),
        None => s.clone(),
    }
}

/// Synaptic input of layer `l` given its source activity.
fn synaptic_input(model: &Model, weights: &WeightSet, l: usize, source: &Tensor) -> Result<Tensor> {
    let spec = &model.arch.layers[l];
    let out = match spec.kind {
        LayerKind::Conv => conv_forward(
            source,
            weights.layers[l].as_ref().expect("conv weights"),
            spec.stride.unwrap(),
        ),
        LayerKind::AvgPool => avgpool_forward(source, spec.kernel.unwrap(), spec.stride.unwrap()),
        LayerKind::FullyConnected => {
            let flat = source.reshaped(&[flat_len(source.shape())])?;
            fc_forward(&flat, weights.layers[l].as_ref().expect("fc weights"))
        }
    };
    Ok(out)
}

/// Advance every layer and every block classifier one LIF step.
///
/// The first layer reads the real-valued `input_t` (direct encoding); each
/// other layer reads the current step's masked spikes of the layer below;
/// each classifier reads the current step's masked spikes of its block top.
pub fn forward_step(
    model: &Model,
    weights: &WeightSet,
    state: &mut NetState,
    input_t: &Tensor,
    masks: &DropoutMasks,
) -> Result<()> {
    if input_t.shape() != model.arch.input_shape {
        return Err(Error::ShapeMismatch {
            context: "forward_step input".into(),
            expected: model.arch.input_shape.to_vec(),
            got: input_t.shape().to_vec(),
        });
    }
    let mut below: Tensor = input_t.clone();
    for l in 0..model.num_layers() {
        let syn = synaptic_input(model, weights, l, &below)?;
        let next = lif_step(&state.layers[l], &syn, &model.lif).map_err(|e| match e {
            Error::ShapeMismatch { expected, got, .. } => Error::ShapeMismatch {
                context: format!("layer {l}"),
                expected,
                got,
            },
            other => other,
        })?;
        state.layers[l] = next;
        below = apply_masked(&state.layers[l].s, model.masks_ref(masks, l));
        if let Some(b) = model.block_ending_at(l) {
            let flat = below.reshaped(&[flat_len(below.shape())])?;
            let syn_c = fc_forward(&flat, &weights.classifiers[b]);
            state.classifiers[b] = lif_step(&state.classifiers[b], &syn_c, &model.lif)?;
        }
    }
    Ok(())
}

impl Model {
    fn masks_ref<'a>(&self, masks: &'a DropoutMasks, l: usize) -> Option<&'a Tensor> {
        masks.per_layer[l].as_ref()
    }
}

/// Run `k_actual` steps from `state`, recording history. `t0` offsets into
/// the sample's input sequence. The state carries across intervals.
pub fn forward_interval(
    model: &Model,
    weights: &WeightSet,
    state: &mut NetState,
    input: &StepInputs,
    t0: usize,
    k_actual: usize,
    masks: &DropoutMasks,
) -> Result<IntervalHistory> {
    if k_actual == 0 {
        return Err(Error::Contract("forward_interval needs k_actual >= 1".into()));
    }
    let mut inputs = Vec::with_capacity(k_actual);
    let mut steps = Vec::with_capacity(k_actual);
    for t in 0..k_actual {
        let x = input.at(t0 + t).into_owned();
        forward_step(model, weights, state, &x, masks)?;
        inputs.push(x);
        steps.push(state.clone());
    }
    Ok(IntervalHistory {
        inputs,
        steps,
        masks: masks.clone(),
    })
}

/// Mean-squared error between the one-hot target and the classifier's
/// time-average firing rate over the interval.
pub fn compute_loss(classifier_spikes: &[&Tensor], target: usize) -> Result<f64> {
    if classifier_spikes.is_empty() {
        return Err(Error::Contract("compute_loss on empty history".into()));
    }
    let num_classes = classifier_spikes[0].len();
    if target >= num_classes {
        return Err(Error::Data(format!(
            "target class {target} out of range for {num_classes} classes"
        )));
    }
    let k = classifier_spikes.len() as f64;
    let mut loss = 0.0;
    for i in 0..num_classes {
        let rate: f64 = classifier_spikes.iter().map(|s| s.data()[i]).sum::<f64>() / k;
        let y = if i == target { 1.0 } else { 0.0 };
        loss += (y - rate) * (y - rate);
    }
    Ok(loss / num_classes as f64)
}

/// Derivative of the interval loss in each recorded classifier spike:
/// `dL/ds_i(t) = -(2 / (N_c * k)) * (y_i - rate_i)`, identical across `t`
/// because the loss sees only the mean rate.
pub fn classifier_seed_error(classifier_spikes: &[&Tensor], target: usize) -> Result<Tensor> {
    if classifier_spikes.is_empty() {
        return Err(Error::Contract(
            "classifier_seed_error on empty history".into(),
        ));
    }
    let num_classes = classifier_spikes[0].len();
    if target >= num_classes {
        return Err(Error::Data(format!(
            "target class {target} out of range for {num_classes} classes"
        )));
    }
    let k = classifier_spikes.len() as f64;
    let coeff = -2.0 / (num_classes as f64 * k);
    let mut data = Vec::with_capacity(num_classes);
    for i in 0..num_classes {
        let rate: f64 = classifier_spikes.iter().map(|s| s.data()[i]).sum::<f64>() / k;
        let y = if i == target { 1.0 } else { 0.0 };
        data.push(coeff * (y - rate));
    }
    Tensor::from_vec(&[num_classes], data)
}

/// Per-weight gradients mirroring a [`WeightSet`], zeroed at interval start
/// and accumulated across the interval's steps.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet {
    pub layers: Vec<Option<Tensor>>,
    pub classifiers: Vec<Tensor>,
}

impl GradSet {
    pub fn zeros_like(weights: &WeightSet) -> GradSet {
        GradSet {
            layers: weights
                .layers
                .iter()
                .map(|w| w.as_ref().map(|t| Tensor::zeros(t.shape())))
                .collect(),
            classifiers: weights
                .classifiers
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &GradSet, scale: f64) -> Result<()> {
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                a.add_scaled(b, scale)?;
            }
        }
        for (a, b) in self.classifiers.iter_mut().zip(other.classifiers.iter()) {
            a.add_scaled(b, scale)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.layers.iter_mut().flatten() {
            t.scale_in_place(factor);
        }
        for t in self.classifiers.iter_mut() {
            t.scale_in_place(factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        let a = self
            .layers
            .iter()
            .flatten()
            .fold(0.0f64, |m, t| m.max(t.max_abs()));
        self.classifiers.iter().fold(a, |m, t| m.max(t.max_abs()))
    }
}
