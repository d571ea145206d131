//! Analytical estimator of training cost for a `(k, n)` configuration:
//! graph memory, external-memory traffic, additions, multiply-accumulates,
//! and the combined figure of merit.
//!
//! Counting conventions (also emitted in every report header):
//! - All quantities count tensor elements / element transfers / scalar ops;
//!   multiply by bytes-per-element externally.
//! - `|W|` is a layer's weight count (0 for pools), `|U| = batch x neurons`.
//! - Graph memory per layer (and per classifier) per stored step is 5
//!   element-sets: 2 states (potential, spike) + 2 intermediates (synaptic
//!   input, pre-threshold potential) + 1 gradient.
//! - A pool's dense addition count is `k^2` accumulations per output; pools
//!   carry no weights, so they contribute nothing to MACs or weight traffic.
//! - Per batch iteration, each interval of length `k_i` costs: forward
//!   counts x `k_i`, mid-backward counts x `k_i - 1`, one end-of-interval
//!   backward step.

use serde::{Deserialize, Serialize};

use crate::engine::{split_intervals, IntervalHistory, Model};
use crate::error::{Error, Result};
use crate::topology::{flat_len, infer_shapes, BlockPlan, ClassifierMode, LayerKind, NetworkArch};

pub const COUNTING_CONVENTION: &str = "element counts; graph memory = 5 element-sets per layer-step (2 states + 2 intermediates + 1 gradient); pools weightless with k^2 adds per output; per-iteration totals = forward*k + mid-backward*(k-1) + end-backward*1 per interval";

#[derive(Clone, Debug)]
pub struct CostInputs {
    pub arch: NetworkArch,
    pub plan: BlockPlan,
    /// Truncation interval length.
    pub k: usize,
    /// Total time steps per batch iteration.
    pub time_steps: usize,
    pub batch_size: usize,
    /// `alpha[l]`: sparsity of what layer `l` consumes (input image for
    /// l=0, spikes of l-1 otherwise), in [0, 1].
    pub alpha: Vec<f64>,
    /// Per-block classifier input sparsity.
    pub alpha_c: Vec<f64>,
    /// Constant workspace term added to memory cost.
    pub workspace_constant: f64,
}

impl CostInputs {
    pub fn new(
        arch: NetworkArch,
        plan: BlockPlan,
        k: usize,
        time_steps: usize,
        batch_size: usize,
    ) -> Result<Self> {
        let layers = arch.layers.len();
        let blocks = plan.num_blocks();
        let inputs = CostInputs {
            arch,
            plan,
            k,
            time_steps,
            batch_size,
            alpha: vec![1.0; layers],
            alpha_c: vec![1.0; blocks],
            workspace_constant: 0.0,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("truncation interval k must be >= 1".into()));
        }
        if self.time_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "time_steps and batch_size must be >= 1".into(),
            ));
        }
        if self.alpha.len() != self.arch.layers.len()
            || self.alpha_c.len() != self.plan.num_blocks()
        {
            return Err(Error::Config(
                "sparsity vectors must match layer/block counts".into(),
            ));
        }
        for &a in self.alpha.iter().chain(self.alpha_c.iter()) {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Data(format!("sparsity {a} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemoryMode {
    Bptt,
    LocalBptt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardPosition {
    Mid,
    IntervalEnd,
}

/// Derived per-layer and per-block quantities shared by all estimators.
struct Quantities {
    /// (|W|, |U|, dense adds M, dense MACs through this layer's weights).
    layer: Vec<(f64, f64, f64, f64)>,
    /// Per block: (|W_c|, |U_c|, dense classifier adds/MACs |W_c||U_c|/N_c).
    class: Vec<(f64, f64, f64)>,
    frozen: bool,
}

fn quantities(inputs: &CostInputs) -> Result<Quantities> {
    let shapes = infer_shapes(&inputs.arch)?;
    let nb = inputs.batch_size as f64;
    let nc = inputs.arch.num_classes as f64;
    let mut layer = Vec::with_capacity(inputs.arch.layers.len());
    for (l, spec) in inputs.arch.layers.iter().enumerate() {
        let u = nb * flat_len(&shapes[l]) as f64;
        let in_shape: &[usize] = if l == 0 {
            &inputs.arch.input_shape
        } else {
            &shapes[l - 1]
        };
        match spec.kind {
            LayerKind::Conv => {
                let k = spec.kernel.unwrap() as f64;
                let w = spec.size as f64 * in_shape[0] as f64 * k * k;
                let m = w * u / spec.size as f64;
                layer.push((w, u, m, m));
            }
            LayerKind::FullyConnected => {
                let w = spec.size as f64 * flat_len(in_shape) as f64;
                let m = w * u / spec.size as f64;
                layer.push((w, u, m, m));
            }
            LayerKind::AvgPool => {
                let k = spec.kernel.unwrap() as f64;
                layer.push((0.0, u, k * k * u, 0.0));
            }
        }
    }
    let mut class = Vec::with_capacity(inputs.plan.num_blocks());
    for b in 0..inputs.plan.num_blocks() {
        let top = inputs.plan.classifier_at(b);
        let wc = nc * flat_len(&shapes[top]) as f64;
        let uc = nb * nc;
        class.push((wc, uc, wc * uc / nc));
    }
    Ok(Quantities {
        layer,
        class,
        frozen: inputs.plan.classifier_mode == ClassifierMode::FrozenRandom,
    })
}

/// Graph memory of one stored step: 5 element-sets per layer and per
/// classifier.
fn graph_cost_per_step(q: &Quantities) -> f64 {
    let layers: f64 = q.layer.iter().map(|&(_, u, _, _)| 5.0 * u).sum();
    let cls: f64 = q.class.iter().map(|&(_, uc, _)| 5.0 * uc).sum();
    layers + cls
}

fn weight_count(q: &Quantities) -> f64 {
    q.layer.iter().map(|&(w, ..)| w).sum::<f64>()
        + q.class.iter().map(|&(wc, ..)| wc).sum::<f64>()
}

/// Peak memory in element counts.
///
/// Full-window mode stores `k` whole step graphs. Local mode stores `k - 1`
/// whole graphs plus, at the interval's final step, only the largest
/// single-block partial graph (blocks train one at a time there).
pub fn memory_cost(inputs: &CostInputs, mode: MemoryMode) -> Result<f64> {
    inputs.validate()?;
    let q = quantities(inputs)?;
    let whole = graph_cost_per_step(&q);
    let k = inputs.k as f64;
    let base = weight_count(&q) + inputs.workspace_constant;
    Ok(match mode {
        MemoryMode::Bptt => k * whole + base,
        MemoryMode::LocalBptt => {
            let largest_block = (0..inputs.plan.num_blocks())
                .map(|b| {
                    let blk = inputs.plan.blocks[b];
                    let layers: f64 = blk
                        .layer_indices()
                        .map(|l| 5.0 * q.layer[l].1)
                        .sum();
                    layers + 5.0 * q.class[b].1
                })
                .fold(0.0f64, f64::max);
            (k - 1.0) * whole + largest_block + base
        }
    })
}

/// External-memory (reads, writes) per forward time step: each layer reads
/// its weights and previous states and writes updated states; spikes are
/// one-bit and omitted.
pub fn mem_access_forward(inputs: &CostInputs) -> Result<(f64, f64)> {
    inputs.validate()?;
    let q = quantities(inputs)?;
    let mut reads = 0.0;
    let mut writes = 0.0;
    for b in 0..inputs.plan.num_blocks() {
        let blk = inputs.plan.blocks[b];
        for l in blk.layer_indices() {
            let (w, u, ..) = q.layer[l];
            reads += w + u;
            writes += u;
        }
        let (wc, uc, _) = q.class[b];
        reads += if q.frozen { 0.0 } else { wc } + uc;
        writes += uc;
    }
    Ok((reads, writes))
}

/// External-memory (reads, writes) per backward time step.
///
/// Mid-interval steps read current states, next-step potential errors,
/// upper-layer weights for error propagation, and accumulated gradients.
/// At the interval end there is no temporal component and the top states
/// stay on chip, so reads shrink to lower-layer states plus propagation
/// weights. Frozen-random classifiers drop all classifier-weight traffic.
pub fn mem_access_backward(
    inputs: &CostInputs,
    position: BackwardPosition,
) -> Result<(f64, f64)> {
    inputs.validate()?;
    let q = quantities(inputs)?;
    let mut reads = 0.0;
    let mut writes = 0.0;
    for b in 0..inputs.plan.num_blocks() {
        let blk = inputs.plan.blocks[b];
        let idx: Vec<usize> = blk.layer_indices().collect();
        let (wc, uc, _) = q.class[b];
        let wc_traffic = if q.frozen { 0.0 } else { wc };
        match position {
            BackwardPosition::Mid => {
                for &l in &idx {
                    let (w, u, ..) = q.layer[l];
                    reads += w + 2.0 * u;
                }
                for &l in &idx[1..] {
                    reads += q.layer[l].0;
                }
                reads += 2.0 * wc_traffic + 3.0 * uc;
            }
            BackwardPosition::IntervalEnd => {
                for (i, &l) in idx.iter().enumerate() {
                    if i + 1 < idx.len() {
                        reads += q.layer[idx[i + 1]].0 + q.layer[l].1;
                    }
                }
                reads += wc_traffic;
            }
        }
        for &l in &idx {
            let (w, u, ..) = q.layer[l];
            writes += w + u;
        }
        writes += wc_traffic + uc;
    }
    Ok((reads, writes))
}

/// (forward, backward) additions per time step, sparsity-gated.
pub fn additions(inputs: &CostInputs) -> Result<(f64, f64)> {
    inputs.validate()?;
    let q = quantities(inputs)?;
    let nb = inputs.batch_size as f64;
    let mut fwd = 0.0;
    let mut bwd = 0.0;
    for (l, &(w, u, m, _)) in q.layer.iter().enumerate() {
        fwd += inputs.alpha[l] * m;
        bwd += 2.0 * u + nb * inputs.alpha[l] * w;
    }
    for (b, &(wc, uc, mc)) in q.class.iter().enumerate() {
        fwd += inputs.alpha_c[b] * mc;
        bwd += 2.0 * uc;
        if !q.frozen {
            bwd += nb * inputs.alpha_c[b] * wc;
        }
    }
    Ok((fwd, bwd))
}

/// Backward multiply-accumulates per time step: error propagation through
/// upper-layer weights within each block plus the classifier projection.
/// Independent of `k`, sparsity, and classifier mode.
pub fn macs(inputs: &CostInputs) -> Result<f64> {
    inputs.validate()?;
    let q = quantities(inputs)?;
    let mut total = 0.0;
    for b in 0..inputs.plan.num_blocks() {
        let blk = inputs.plan.blocks[b];
        let idx: Vec<usize> = blk.layer_indices().collect();
        for &l in &idx[1..] {
            total += q.layer[l].3;
        }
        total += q.class[b].2;
    }
    Ok(total)
}

/// Normalized cost ratios of a configuration against a baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRatios {
    pub memory: f64,
    pub accesses: f64,
    pub additions: f64,
    pub macs: f64,
}

/// Figure of merit: accuracy loss plus equally-weighted normalized costs;
/// smaller is better. The baseline itself scores 1.0.
pub fn fom(accuracy_loss: f64, ratios: CostRatios) -> f64 {
    accuracy_loss + 0.25 * (ratios.memory + ratios.accesses + ratios.additions + ratios.macs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub convention: String,
    /// Peak memory (local mode unless the plan is one block).
    pub memory_cost: f64,
    pub reads_forward: f64,
    pub writes_forward: f64,
    pub reads_backward_mid: f64,
    pub writes_backward_mid: f64,
    pub reads_backward_end: f64,
    pub additions_forward: f64,
    pub additions_backward: f64,
    pub macs_backward: f64,
    pub total_reads: f64,
    pub total_writes: f64,
    pub total_memory_accesses: f64,
    pub total_additions: f64,
    pub total_macs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fom: Option<f64>,
}

/// Full per-step and per-batch-iteration cost report for one configuration.
pub fn cost_report(inputs: &CostInputs) -> Result<CostReport> {
    let single_block = inputs.plan.num_blocks() == 1;
    let mode = if single_block {
        MemoryMode::Bptt
    } else {
        MemoryMode::LocalBptt
    };
    let memory = memory_cost(inputs, mode)?;
    let (rf, wf) = mem_access_forward(inputs)?;
    let (rm, wm) = mem_access_backward(inputs, BackwardPosition::Mid)?;
    let (re, we) = mem_access_backward(inputs, BackwardPosition::IntervalEnd)?;
    let (af, ab) = additions(inputs)?;
    let mac = macs(inputs)?;

    let mut total_reads = 0.0;
    let mut total_writes = 0.0;
    for ki in split_intervals(inputs.time_steps, inputs.k) {
        let ki = ki as f64;
        total_reads += rf * ki + rm * (ki - 1.0) + re;
        total_writes += wf * ki + wm * (ki - 1.0) + we;
    }
    let t = inputs.time_steps as f64;
    Ok(CostReport {
        convention: COUNTING_CONVENTION.to_string(),
        memory_cost: memory,
        reads_forward: rf,
        writes_forward: wf,
        reads_backward_mid: rm,
        writes_backward_mid: wm,
        reads_backward_end: re,
        additions_forward: af,
        additions_backward: ab,
        macs_backward: mac,
        total_reads,
        total_writes,
        total_memory_accesses: total_reads + total_writes,
        total_additions: (af + ab) * t,
        total_macs: mac * t,
        fom: None,
    })
}

impl CostReport {
    pub fn ratios_against(&self, baseline: &CostReport) -> CostRatios {
        CostRatios {
            memory: self.memory_cost / baseline.memory_cost,
            accesses: self.total_memory_accesses / baseline.total_memory_accesses,
            additions: self.total_additions / baseline.total_additions,
            macs: self.total_macs / baseline.total_macs,
        }
    }
}

/// Exact synaptic-addition count over recorded forward history, walked
/// per nonzero source element. Independent of the analytical model; used
/// to validate it.
pub fn count_forward_adds(model: &Model, histories: &[IntervalHistory]) -> f64 {
    let mut total = 0.0f64;
    for hist in histories {
        for t in 0..hist.k_actual() {
            for (l, spec) in model.arch.layers.iter().enumerate() {
                let source = if l == 0 {
                    hist.inputs[t].clone()
                } else {
                    hist.masked_spikes(t, l - 1)
                };
                total += adds_for_layer(model, l, spec.kind, &source);
            }
            for b in 0..model.num_blocks() {
                let top = model.plan.classifier_at(b);
                let src = hist.masked_spikes(t, top);
                let nonzero = src.data().iter().filter(|&&v| v != 0.0).count() as f64;
                total += nonzero * model.arch.num_classes as f64;
            }
        }
    }
    total
}

fn adds_for_layer(model: &Model, l: usize, kind: LayerKind, source: &crate::Tensor) -> f64 {
    let spec = &model.arch.layers[l];
    match kind {
        LayerKind::FullyConnected => {
            let nonzero = source.data().iter().filter(|&&v| v != 0.0).count() as f64;
            nonzero * spec.size as f64
        }
        LayerKind::Conv | LayerKind::AvgPool => {
            let in_shape = model.layer_input_shape(l);
            let out_shape = &model.shapes[l];
            let (h, w) = (in_shape[1], in_shape[2]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let k = spec.kernel.unwrap();
            let stride = spec.stride.unwrap();
            let fan = |i: usize, o: usize| -> f64 {
                // Number of output positions whose window covers input i.
                let lo = i.saturating_sub(k - 1).div_ceil(stride);
                let hi = i / stride;
                let hi = hi.min(o.saturating_sub(1));
                if lo > hi {
                    0.0
                } else {
                    (hi - lo + 1) as f64
                }
            };
            let out_mult = if kind == LayerKind::Conv {
                out_shape[0] as f64
            } else {
                1.0
            };
            let mut total = 0.0;
            let data = source.data();
            for ci in 0..in_shape[0] {
                for iy in 0..h {
                    let fy = fan(iy, oh);
                    if fy == 0.0 {
                        continue;
                    }
                    for ix in 0..w {
                        if data[(ci * h + iy) * w + ix] == 0.0 {
                            continue;
                        }
                        total += fy * fan(ix, ow) * out_mult;
                    }
                }
            }
            total
        }
    }
}
