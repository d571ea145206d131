//! Run specification: architecture + dataset + training configuration with
//! the precedence CLI flag > config file > built-in default. The effective
//! config is echoed into every output artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ttlbp::encodings::{load_dataset, Dataset};
use ttlbp::engine::{LrDecay, Model, TrainConfig};
use ttlbp::neuron::LifParams;
use ttlbp::topology::{partition_blocks, ClassifierMode, NetworkArch};

use crate::{CliError, CliResult};

/// Partial training config as read from `--config <json>`; every field is
/// optional and falls back to the built-in default unless a CLI flag
/// overrides it.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverlay {
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub time_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub dropout_rate: Option<f64>,
    pub lr_decay: Option<LrDecay>,
    pub lif: Option<LifParams>,
    pub classifier_mode: Option<ClassifierMode>,
    pub seed: Option<u64>,
}

impl ConfigOverlay {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }

    pub fn apply(&self, base: &mut TrainConfig) {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = self.$field.clone() {
                    base.$field = v;
                }
            };
        }
        take!(k);
        take!(n);
        take!(time_steps);
        take!(batch_size);
        take!(learning_rate);
        take!(momentum);
        take!(dropout_rate);
        take!(lr_decay);
        take!(lif);
        take!(classifier_mode);
        take!(seed);
    }
}

/// Everything a training-flavored command needs, resolved and validated.
pub struct RunSpec {
    pub arch: NetworkArch,
    pub dataset: Dataset,
    pub config: TrainConfig,
    pub out_dir: PathBuf,
}

pub fn parse_classifier(s: &str) -> CliResult<ClassifierMode> {
    match s {
        "trainable" => Ok(ClassifierMode::Trainable),
        "random" => Ok(ClassifierMode::FrozenRandom),
        other => Err(CliError::Usage(format!(
            "classifier must be 'trainable' or 'random', got '{other}'"
        ))),
    }
}

pub fn load_arch(path: &Path) -> CliResult<NetworkArch> {
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "architecture file {} does not exist",
            path.display()
        )));
    }
    Ok(NetworkArch::from_json_file(path)?)
}

pub fn load_data(path: &Path) -> CliResult<Dataset> {
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "dataset manifest {} does not exist",
            path.display()
        )));
    }
    Ok(load_dataset(path)?)
}

/// Build the validated model for a config, mapping bad `(k, n)` to usage
/// errors.
pub fn build_model(arch: &NetworkArch, config: &TrainConfig) -> CliResult<Model> {
    let mut plan =
        partition_blocks(arch, config.n).map_err(|e| CliError::Usage(e.to_string()))?;
    plan.classifier_mode = config.classifier_mode;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Model::new(arch.clone(), plan, config.lif)?)
}

/// Deterministic one-line JSON of the effective config for provenance.
pub fn config_line(config: &TrainConfig) -> String {
    serde_json::to_string(config).expect("config serializes")
}

/// FNV-1a hash of the effective config, hex-encoded; stored in checkpoints.
pub fn config_hash(config: &TrainConfig) -> String {
    let bytes = config_line(config);
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}
