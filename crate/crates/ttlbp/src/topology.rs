//! Declarative network architectures, shape inference, partitioning into
//! local blocks, and classifier attachment.
//!
//! Architectures are lists of Conv / AvgPool / FullyConnected layers. Local
//! blocks are counted in *trainable* layers (Conv, FC); pooling layers ride
//! with the trainable layer they follow. Each block carries one spiking
//! fully-connected classifier reading the flattened spikes of the block's
//! last layer; the final block's classifier is the network output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::conv_out_dim;
use crate::rng::{derive_seed, uniform_init};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    AvgPool,
    FullyConnected,
}

impl LayerKind {
    pub fn is_trainable(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::FullyConnected)
    }
}

/// One layer row: `size` is output channels (Conv/AvgPool) or neurons (FC).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

impl LayerSpec {
    pub fn conv(size: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            size,
            kernel: Some(kernel),
            stride: Some(stride),
        }
    }

    pub fn avg_pool(size: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::AvgPool,
            size,
            kernel: Some(kernel),
            stride: Some(stride),
        }
    }

    pub fn fully_connected(size: usize) -> Self {
        LayerSpec {
            kind: LayerKind::FullyConnected,
            size,
            kernel: None,
            stride: None,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let err = |message: String| Error::Architecture {
            layer: index,
            message,
        };
        if self.size == 0 {
            return Err(err("size must be positive".into()));
        }
        match self.kind {
            LayerKind::Conv | LayerKind::AvgPool => {
                let k = self
                    .kernel
                    .ok_or_else(|| err("kernel required for Conv/AvgPool".into()))?;
                let s = self
                    .stride
                    .ok_or_else(|| err("stride required for Conv/AvgPool".into()))?;
                if k == 0 || s == 0 {
                    return Err(err("kernel and stride must be >= 1".into()));
                }
            }
            LayerKind::FullyConnected => {
                if self.kernel.is_some() || self.stride.is_some() {
                    return Err(err("FullyConnected takes no kernel/stride".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    /// `[channels, height, width]`.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkArch {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let arch: NetworkArch = serde_json::from_str(s)?;
        arch.validate()?;
        Ok(arch)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("architecture needs at least one layer".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
        }
        infer_shapes(self)?;
        Ok(())
    }

    pub fn trainable_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.kind.is_trainable()).count()
    }
}

/// Per-layer output shapes: `[C,H,W]` for Conv/AvgPool, `[N]` for FC.
pub fn infer_shapes(arch: &NetworkArch) -> Result<Vec<Vec<usize>>> {
    let mut shapes = Vec::with_capacity(arch.layers.len());
    let mut cur: Vec<usize> = arch.input_shape.to_vec();
    for (i, layer) in arch.layers.iter().enumerate() {
        let err = |message: String| Error::Architecture {
            layer: i,
            message,
        };
        cur = match layer.kind {
            LayerKind::Conv | LayerKind::AvgPool => {
                if cur.len() != 3 {
                    return Err(err(format!(
                        "spatial layer after flat shape {cur:?}"
                    )));
                }
                let k = layer.kernel.unwrap();
                let s = layer.stride.unwrap();
                let oh = conv_out_dim(cur[1], k, s);
                let ow = conv_out_dim(cur[2], k, s);
                match (oh, ow) {
                    (Some(oh), Some(ow)) if oh > 0 && ow > 0 => {
                        let c = if layer.kind == LayerKind::Conv {
                            layer.size
                        } else {
                            cur[0]
                        };
                        vec![c, oh, ow]
                    }
                    _ => {
                        return Err(err(format!(
                            "non-positive spatial output from input {cur:?} with kernel {k}, stride {s}"
                        )))
                    }
                }
            }
            LayerKind::FullyConnected => vec![layer.size],
        };
        shapes.push(cur.clone());
    }
    Ok(shapes)
}

pub fn flat_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierMode {
    #[default]
    Trainable,
    FrozenRandom,
}

/// Contiguous layer-index range `[start, end)` forming one local block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn layer_indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub blocks: Vec<Block>,
    /// Trainable layers per block as requested (last block may hold fewer).
    pub n: usize,
    pub classifier_mode: ClassifierMode,
}

impl BlockPlan {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Index of the layer whose flattened spikes feed block `b`'s classifier.
    pub fn classifier_at(&self, b: usize) -> usize {
        self.blocks[b].end - 1
    }

    /// Block owning layer `l`.
    pub fn block_of_layer(&self, l: usize) -> usize {
        self.blocks
            .iter()
            .position(|blk| blk.start <= l && l < blk.end)
            .expect("layer index out of plan range")
    }
}

/// Split an architecture into local blocks of `n` trainable layers each.
///
/// Pooling layers attach to the preceding trainable layer's block; leading
/// pools (unusual) join the first block. When `n` equals the trainable-layer
/// count the plan has a single block. If `n` does not divide the count, the
/// last block takes the remainder.
pub fn partition_blocks(arch: &NetworkArch, n: usize) -> Result<BlockPlan> {
    let trainable = arch.trainable_layer_count();
    if n == 0 || n > trainable {
        return Err(Error::Config(format!(
            "block length n={n} out of range 1..={trainable}"
        )));
    }
    let mut blocks = Vec::new();
    let mut start = 0usize;
    let mut count = 0usize;
    for (i, layer) in arch.layers.iter().enumerate() {
        if layer.kind.is_trainable() {
            count += 1;
        }
        // Close the block once it holds n trainable layers and the next
        // layer is not a pool that belongs to this block.
        let next_is_pool = arch
            .layers
            .get(i + 1)
            .map(|l| !l.kind.is_trainable())
            .unwrap_or(false);
        if count == n && !next_is_pool {
            blocks.push(Block {
                start,
                end: i + 1,
            });
            start = i + 1;
            count = 0;
        }
    }
    if start < arch.layers.len() {
        blocks.push(Block {
            start,
            end: arch.layers.len(),
        });
    }
    Ok(BlockPlan {
        blocks,
        n,
        classifier_mode: ClassifierMode::Trainable,
    })
}

/// Layer weights, per-block classifier weights, and momentum buffers.
///
/// `layers[i]` is `None` for pooling layers. Frozen-random classifiers carry
/// no momentum buffers and are never updated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub layers: Vec<Option<Tensor>>,
    pub classifiers: Vec<Tensor>,
    pub layer_momentum: Vec<Option<Tensor>>,
    pub classifier_momentum: Vec<Option<Tensor>>,
    pub classifier_mode: ClassifierMode,
}

const SEED_TAG_LAYER: u64 = 0x4c41_5945;
const SEED_TAG_CLASSIFIER: u64 = 0x434c_5346;

/// Weight shape for trainable layer `i`, `None` for pools.
pub fn layer_weight_shape(
    arch: &NetworkArch,
    shapes: &[Vec<usize>],
    i: usize,
) -> Option<Vec<usize>> {
    let layer = &arch.layers[i];
    let in_shape: &[usize] = if i == 0 {
        &arch.input_shape
    } else {
        &shapes[i - 1]
    };
    match layer.kind {
        LayerKind::Conv => {
            let k = layer.kernel.unwrap();
            Some(vec![layer.size, in_shape[0], k, k])
        }
        LayerKind::FullyConnected => Some(vec![layer.size, flat_len(in_shape)]),
        LayerKind::AvgPool => None,
    }
}

/// Build one fully-connected spiking classifier per block, seeded.
pub fn attach_classifiers(
    plan: &BlockPlan,
    arch: &NetworkArch,
    mode: ClassifierMode,
    rng_seed: u64,
) -> Result<Vec<Tensor>> {
    let shapes = infer_shapes(arch)?;
    let mut out = Vec::with_capacity(plan.num_blocks());
    for b in 0..plan.num_blocks() {
        let top = plan.classifier_at(b);
        let in_len = flat_len(&shapes[top]);
        let seed = derive_seed(rng_seed, SEED_TAG_CLASSIFIER, &[b as u64, mode_tag(mode)]);
        out.push(uniform_init(
            &[arch.num_classes, in_len],
            in_len,
            seed,
        ));
    }
    Ok(out)
}

fn mode_tag(mode: ClassifierMode) -> u64 {
    match mode {
        ClassifierMode::Trainable => 0,
        ClassifierMode::FrozenRandom => 1,
    }
}

/// Initialize all weights (fan-in-scaled uniform) and zeroed momentum.
pub fn init_weights(arch: &NetworkArch, plan: &BlockPlan, rng_seed: u64) -> Result<WeightSet> {
    let shapes = infer_shapes(arch)?;
    let mut layers = Vec::with_capacity(arch.layers.len());
    let mut layer_momentum = Vec::with_capacity(arch.layers.len());
    for i in 0..arch.layers.len() {
        match layer_weight_shape(arch, &shapes, i) {
            Some(shape) => {
                let fan_in = match arch.layers[i].kind {
                    LayerKind::Conv => shape[1] * shape[2] * shape[3],
                    LayerKind::FullyConnected => shape[1],
                    LayerKind::AvgPool => unreachable!(),
                };
                let seed = derive_seed(rng_seed, SEED_TAG_LAYER, &[i as u64]);
                layers.push(Some(uniform_init(&shape, fan_in, seed)));
                layer_momentum.push(Some(Tensor::zeros(&shape)));
            }
            None => {
                layers.push(None);
                layer_momentum.push(None);
            }
        }
    }
    let mode = plan.classifier_mode;
    let classifiers = attach_classifiers(plan, arch, mode, rng_seed)?;
    let classifier_momentum = classifiers
        .iter()
        .map(|w| match mode {
            ClassifierMode::Trainable => Some(Tensor::zeros(w.shape())),
            ClassifierMode::FrozenRandom => None,
        })
        .collect();
    Ok(WeightSet {
        layers,
        classifiers,
        layer_momentum,
        classifier_momentum,
        classifier_mode: mode,
    })
}

/// Table-2-style presets at the geometries used for cost reproduction.
pub mod presets {
    use super::*;

    /// Small LeNet (6/16/120 channels, FC 128) for 47-class frame inputs.
    /// 28x28 digit images are zero-padded to 32x32 before entering the net.
    pub fn lenet1() -> NetworkArch {
        NetworkArch {
            input_shape: [1, 32, 32],
            layers: vec![
                LayerSpec::conv(6, 5, 1),
                LayerSpec::avg_pool(6, 2, 2),
                LayerSpec::conv(16, 5, 1),
                LayerSpec::avg_pool(16, 2, 2),
                LayerSpec::conv(120, 5, 1),
                LayerSpec::fully_connected(128),
            ],
            num_classes: 47,
        }
    }

    /// Larger LeNet (64/128/128 channels, FC 256) for 11-class DVS inputs.
    pub fn lenet2() -> NetworkArch {
        NetworkArch {
            input_shape: [2, 128, 128],
            layers: vec![
                LayerSpec::conv(64, 5, 1),
                LayerSpec::avg_pool(64, 2, 2),
                LayerSpec::conv(128, 5, 1),
                LayerSpec::avg_pool(128, 2, 2),
                LayerSpec::conv(128, 5, 1),
                LayerSpec::fully_connected(256),
            ],
            num_classes: 11,
        }
    }

    /// Eight-trainable-layer AlexNet variant for 10-class DVS inputs.
    pub fn alexnet() -> NetworkArch {
        NetworkArch {
            input_shape: [2, 128, 128],
            layers: vec![
                LayerSpec::conv(96, 3, 2),
                LayerSpec::conv(256, 3, 1),
                LayerSpec::avg_pool(256, 2, 2),
                LayerSpec::conv(384, 3, 1),
                LayerSpec::avg_pool(384, 2, 2),
                LayerSpec::conv(512, 3, 1),
                LayerSpec::conv(384, 3, 1),
                LayerSpec::conv(256, 3, 1),
                LayerSpec::fully_connected(4096),
                LayerSpec::fully_connected(1024),
            ],
            num_classes: 10,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_shape_formula() {
        let arch = NetworkArch {
            input_shape: [1, 28, 28],
            layers: vec![LayerSpec::conv(6, 5, 1), LayerSpec::avg_pool(6, 2, 2)],
            num_classes: 10,
        };
        let shapes = infer_shapes(&arch).unwrap();
        assert_eq!(shapes[0], vec![6, 24, 24]);
        assert_eq!(shapes[1], vec![6, 12, 12]);
    }

    #[test]
    fn fc_shape_is_neuron_count() {
        let arch = NetworkArch {
            input_shape: [1, 4, 4],
            layers: vec![LayerSpec::fully_connected(128)],
            num_classes: 10,
        };
        assert_eq!(infer_shapes(&arch).unwrap()[0], vec![128]);
    }

    #[test]
    fn underflowing_conv_names_the_layer() {
        let arch = NetworkArch {
            input_shape: [1, 4, 4],
            layers: vec![LayerSpec::conv(8, 5, 1)],
            num_classes: 10,
        };
        match infer_shapes(&arch).unwrap_err() {
            Error::Architecture { layer, .. } => assert_eq!(layer, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn lenet1_shapes_match_hand_computation() {
        let arch = presets::lenet1();
        let shapes = infer_shapes(&arch).unwrap();
        assert_eq!(
            shapes,
            vec![
                vec![6, 28, 28],
                vec![6, 14, 14],
                vec![16, 10, 10],
                vec![16, 5, 5],
                vec![120, 1, 1],
                vec![128],
            ]
        );
    }

    #[test]
    fn lenet2_and_alexnet_are_geometrically_valid() {
        let l2 = infer_shapes(&presets::lenet2()).unwrap();
        assert_eq!(l2[4], vec![128, 25, 25]);
        assert_eq!(l2[5], vec![256]);
        let ax = infer_shapes(&presets::alexnet()).unwrap();
        assert_eq!(ax[0], vec![96, 63, 63]);
        assert_eq!(ax[7], vec![256, 8, 8]);
        assert_eq!(ax[9], vec![1024]);
    }

    #[test]
    fn partition_full_network_is_one_block() {
        let arch = presets::lenet1();
        let plan = partition_blocks(&arch, 4).unwrap();
        assert_eq!(plan.blocks, vec![Block { start: 0, end: 6 }]);
    }

    #[test]
    fn partition_layerwise_gives_one_block_per_trainable_layer() {
        let arch = presets::lenet1();
        let plan = partition_blocks(&arch, 1).unwrap();
        assert_eq!(
            plan.blocks,
            vec![
                Block { start: 0, end: 2 },
                Block { start: 2, end: 4 },
                Block { start: 4, end: 5 },
                Block { start: 5, end: 6 },
            ]
        );
    }

    #[test]
    fn partition_pairs_trainable_layers() {
        let arch = presets::lenet1();
        let plan = partition_blocks(&arch, 2).unwrap();
        assert_eq!(
            plan.blocks,
            vec![Block { start: 0, end: 4 }, Block { start: 4, end: 6 }]
        );
    }

    #[test]
    fn partition_uneven_split_puts_remainder_last() {
        let arch = presets::lenet1();
        let plan = partition_blocks(&arch, 3).unwrap();
        assert_eq!(
            plan.blocks,
            vec![Block { start: 0, end: 5 }, Block { start: 5, end: 6 }]
        );
    }

    #[test]
    fn partition_rejects_out_of_range_n() {
        let arch = presets::lenet1();
        assert!(partition_blocks(&arch, 0).is_err());
        assert!(partition_blocks(&arch, 5).is_err());
    }

    #[test]
    fn partition_covers_every_layer_exactly_once() {
        let arch = presets::alexnet();
        for n in 1..=8 {
            let plan = partition_blocks(&arch, n).unwrap();
            let mut covered = vec![0usize; arch.layers.len()];
            for blk in &plan.blocks {
                for l in blk.layer_indices() {
                    covered[l] += 1;
                }
            }
            assert!(covered.iter().all(|&c| c == 1), "n={n}: {covered:?}");
            assert_eq!(plan.blocks.first().unwrap().start, 0);
            assert_eq!(plan.blocks.last().unwrap().end, arch.layers.len());
        }
    }

    #[test]
    fn classifier_count_follows_blocks() {
        let arch = presets::lenet1();
        let plan = partition_blocks(&arch, 1).unwrap();
        let cls = attach_classifiers(&plan, &arch, ClassifierMode::Trainable, 3).unwrap();
        assert_eq!(cls.len(), 4);
        // Block tops: pool1 (6x14x14), pool2 (16x5x5), conv120, fc128.
        assert_eq!(cls[0].shape(), &[47, 6 * 14 * 14]);
        assert_eq!(cls[1].shape(), &[47, 16 * 5 * 5]);
        assert_eq!(cls[2].shape(), &[47, 120]);
        assert_eq!(cls[3].shape(), &[47, 128]);

        let single = partition_blocks(&arch, 4).unwrap();
        let cls = attach_classifiers(&single, &arch, ClassifierMode::Trainable, 3).unwrap();
        assert_eq!(cls.len(), 1);
    }

    #[test]
    fn init_is_bitwise_deterministic() {
        let arch = presets::lenet1();
        let plan = partition_blocks(&arch, 2).unwrap();
        let a = init_weights(&arch, &plan, 99).unwrap();
        let b = init_weights(&arch, &plan, 99).unwrap();
        assert_eq!(a, b);
        let c = init_weights(&arch, &plan, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_and_momentum_layout() {
        let arch = NetworkArch {
            input_shape: [1, 1, 3],
            layers: vec![LayerSpec::fully_connected(2)],
            num_classes: 2,
        };
        let plan = partition_blocks(&arch, 1).unwrap();
        let ws = init_weights(&arch, &plan, 1).unwrap();
        assert_eq!(ws.layers[0].as_ref().unwrap().shape(), &[2, 3]);
        assert_eq!(ws.layer_momentum[0].as_ref().unwrap().max_abs(), 0.0);
        assert!(ws.classifier_momentum[0].is_some());
    }

    #[test]
    fn frozen_random_classifiers_have_no_momentum() {
        let arch = presets::lenet1();
        let mut plan = partition_blocks(&arch, 1).unwrap();
        plan.classifier_mode = ClassifierMode::FrozenRandom;
        let ws = init_weights(&arch, &plan, 5).unwrap();
        assert!(ws.classifier_momentum.iter().all(|m| m.is_none()));
    }

    #[test]
    fn init_mean_within_three_sigma() {
        let arch = presets::lenet1();
        let plan = partition_blocks(&arch, 4).unwrap();
        let ws = init_weights(&arch, &plan, 11).unwrap();
        for w in ws.layers.iter().flatten().chain(ws.classifiers.iter()) {
            let n = w.len() as f64;
            let fan_in: f64 = w.shape()[1..].iter().product::<usize>() as f64;
            let bound = 1.0 / fan_in.sqrt();
            let sigma_mean = bound / (3.0 * n).sqrt();
            let mean = w.sum() / n;
            assert!(
                mean.abs() < 3.0 * sigma_mean,
                "mean {mean} exceeds 3 sigma {sigma_mean} for shape {:?}",
                w.shape()
            );
        }
    }

    #[test]
    fn arch_json_round_trip() {
        let arch = presets::lenet2();
        let json = serde_json::to_string(&arch).unwrap();
        let back = NetworkArch::from_json_str(&json).unwrap();
        assert_eq!(arch, back);
    }

    #[test]
    fn fc_spec_rejects_kernel() {
        let mut spec = LayerSpec::fully_connected(4);
        spec.kernel = Some(3);
        assert!(spec.validate(0).is_err());
    }

    #[test]
    fn bundled_arch_files_match_presets() {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../arch");
        for (file, preset) in [
            ("lenet1.json", presets::lenet1()),
            ("lenet2.json", presets::lenet2()),
            ("alexnet.json", presets::alexnet()),
        ] {
            let arch = NetworkArch::from_json_file(&root.join(file)).unwrap();
            assert_eq!(arch, preset, "{file} drifted from its preset");
        }
        let toy = NetworkArch::from_json_file(&root.join("toy.json")).unwrap();
        assert_eq!(toy.trainable_layer_count(), 2);
        assert_eq!(infer_shapes(&toy).unwrap().last().unwrap(), &vec![16]);
    }
}
