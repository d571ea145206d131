//! `ttlbp estimate-cost`: analytical cost table over a `(k, n)` grid with
//! ratios normalized against the full-window single-block baseline.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::json;
use ttlbp::costmodel::{cost_report, fom, CostInputs, CostReport, COUNTING_CONVENTION};
use ttlbp::engine::SparsityEstimate;
use ttlbp::topology::{partition_blocks, ClassifierMode, NetworkArch};

use crate::commands::parse_usize_list;
use crate::spec::load_arch;
use crate::tables::{fmt_f64, fmt_opt, write_csv};
use crate::{CliError, CliResult};

#[derive(Clone, Debug)]
pub struct EstimateArgs {
    pub arch: PathBuf,
    pub k_list: String,
    pub n_list: String,
    pub batch_size: usize,
    pub time_steps: usize,
    pub sparsity: Option<String>,
    pub classifier: String,
    pub accuracy: Option<PathBuf>,
    pub out: PathBuf,
}

/// One accuracy entry joined against cost rows to compute the figure of
/// merit.
#[derive(Clone, Debug, Deserialize)]
pub struct AccuracyEntry {
    pub k: usize,
    pub n: usize,
    pub classifier: String,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct Sparsity {
    pub per_layer: Vec<f64>,
    pub per_block_fallback: f64,
    pub per_block: Option<Vec<f64>>,
}

/// `--sparsity` accepts a uniform value or a path to harvested rates
/// (either a bare estimate or `train`'s `firing_rates.json`).
pub fn parse_sparsity(arg: Option<&str>, arch: &NetworkArch) -> CliResult<Sparsity> {
    let layers = arch.layers.len();
    match arg {
        None => Ok(Sparsity {
            per_layer: vec![1.0; layers],
            per_block_fallback: 1.0,
            per_block: None,
        }),
        Some(s) => {
            if let Ok(v) = s.parse::<f64>() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CliError::Usage(format!("sparsity {v} outside [0, 1]")));
                }
                return Ok(Sparsity {
                    per_layer: vec![v; layers],
                    per_block_fallback: v,
                    per_block: None,
                });
            }
            let path = Path::new(s);
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read sparsity file {s}: {e}"))
            })?;
            #[derive(Deserialize)]
            struct Wrapped {
                sparsity: SparsityEstimate,
            }
            let estimate: SparsityEstimate = serde_json::from_str::<Wrapped>(&text)
                .map(|w| w.sparsity)
                .or_else(|_| serde_json::from_str::<SparsityEstimate>(&text))
                .map_err(|e| CliError::Usage(format!("bad sparsity file {s}: {e}")))?;
            if estimate.per_layer_input.len() != layers {
                return Err(CliError::Usage(format!(
                    "sparsity file has {} layers, architecture has {layers}",
                    estimate.per_layer_input.len()
                )));
            }
            Ok(Sparsity {
                per_layer: estimate.per_layer_input,
                per_block_fallback: 1.0,
                per_block: Some(estimate.per_block_classifier_input),
            })
        }
    }
}

fn mode_name(mode: ClassifierMode) -> &'static str {
    match mode {
        ClassifierMode::Trainable => "trainable",
        ClassifierMode::FrozenRandom => "random",
    }
}

pub struct EstimateRow {
    pub k: usize,
    pub n: usize,
    pub mode: ClassifierMode,
    pub report: CostReport,
    pub ratios: ttlbp::costmodel::CostRatios,
    pub fom: Option<f64>,
}

fn build_inputs(
    arch: &NetworkArch,
    n: usize,
    k: usize,
    time_steps: usize,
    batch_size: usize,
    mode: ClassifierMode,
    sparsity: &Sparsity,
) -> CliResult<CostInputs> {
    let mut plan = partition_blocks(arch, n).map_err(|e| CliError::Usage(e.to_string()))?;
    plan.classifier_mode = mode;
    let blocks = plan.num_blocks();
    let mut inputs = CostInputs::new(arch.clone(), plan, k, time_steps, batch_size)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    inputs.alpha = sparsity.per_layer.clone();
    inputs.alpha_c = match &sparsity.per_block {
        // Harvested per-block rates only apply when the block count
        // matches the harvesting plan; otherwise fall back.
        Some(v) if v.len() == blocks => v.clone(),
        _ => vec![sparsity.per_block_fallback; blocks],
    };
    Ok(inputs)
}

pub fn estimate_rows(
    arch: &NetworkArch,
    ks: &[usize],
    ns: &[usize],
    modes: &[ClassifierMode],
    time_steps: usize,
    batch_size: usize,
    sparsity: &Sparsity,
    accuracies: Option<&[AccuracyEntry]>,
) -> CliResult<(CostReport, Vec<EstimateRow>)> {
    let all = arch.trainable_layer_count();
    let baseline_inputs = build_inputs(
        arch,
        all,
        time_steps,
        time_steps,
        batch_size,
        ClassifierMode::Trainable,
        sparsity,
    )?;
    let baseline = cost_report(&baseline_inputs).map_err(|e| CliError::Usage(e.to_string()))?;
    let baseline_acc = accuracies.and_then(|table| {
        table
            .iter()
            .find(|e| e.k == time_steps && e.n == all && e.classifier == "trainable")
            .map(|e| e.accuracy)
    });

    let mut rows = Vec::new();
    for &mode in modes {
        for &n in ns {
            for &k in ks {
                let inputs = build_inputs(arch, n, k, time_steps, batch_size, mode, sparsity)?;
                let report =
                    cost_report(&inputs).map_err(|e| CliError::Usage(e.to_string()))?;
                let ratios = report.ratios_against(&baseline);
                let row_fom = match (accuracies, baseline_acc) {
                    (Some(table), Some(base_acc)) => table
                        .iter()
                        .find(|e| e.k == k && e.n == n && e.classifier == mode_name(mode))
                        .map(|e| fom(base_acc - e.accuracy, ratios)),
                    _ => None,
                };
                rows.push(EstimateRow {
                    k,
                    n,
                    mode,
                    report,
                    ratios,
                    fom: row_fom,
                });
            }
        }
    }
    Ok((baseline, rows))
}

pub fn cmd_estimate(args: &EstimateArgs) -> CliResult<()> {
    let arch = load_arch(&args.arch)?;
    let ks = parse_usize_list(&args.k_list, "--k")?;
    let ns = parse_usize_list(&args.n_list, "--n")?;
    let modes: Vec<ClassifierMode> = match args.classifier.as_str() {
        "both" => vec![ClassifierMode::Trainable, ClassifierMode::FrozenRandom],
        "trainable" => vec![ClassifierMode::Trainable],
        "random" => vec![ClassifierMode::FrozenRandom],
        other => {
            return Err(CliError::Usage(format!(
                "classifier must be trainable|random|both, got '{other}'"
            )))
        }
    };
    let sparsity = parse_sparsity(args.sparsity.as_deref(), &arch)?;
    let accuracies: Option<Vec<AccuracyEntry>> = match &args.accuracy {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read accuracy table {}: {e}", path.display()))
            })?;
            Some(serde_json::from_str(&text).map_err(|e| {
                CliError::Usage(format!("bad accuracy table {}: {e}", path.display()))
            })?)
        }
        None => None,
    };

    let (_, rows) = estimate_rows(
        &arch,
        &ks,
        &ns,
        &modes,
        args.time_steps,
        args.batch_size,
        &sparsity,
        accuracies.as_deref(),
    )?;

    std::fs::create_dir_all(&args.out)?;
    let header: Vec<String> = [
        "k",
        "n",
        "classifier",
        "memory_cost",
        "reads_forward",
        "writes_forward",
        "reads_backward_mid",
        "writes_backward_mid",
        "reads_backward_end",
        "additions_forward",
        "additions_backward",
        "macs_backward",
        "total_reads",
        "total_writes",
        "total_memory_accesses",
        "total_additions",
        "total_macs",
        "ratio_memory",
        "ratio_accesses",
        "ratio_additions",
        "ratio_macs",
        "fom",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                r.n.to_string(),
                mode_name(r.mode).to_string(),
                fmt_f64(r.report.memory_cost),
                fmt_f64(r.report.reads_forward),
                fmt_f64(r.report.writes_forward),
                fmt_f64(r.report.reads_backward_mid),
                fmt_f64(r.report.writes_backward_mid),
                fmt_f64(r.report.reads_backward_end),
                fmt_f64(r.report.additions_forward),
                fmt_f64(r.report.additions_backward),
                fmt_f64(r.report.macs_backward),
                fmt_f64(r.report.total_reads),
                fmt_f64(r.report.total_writes),
                fmt_f64(r.report.total_memory_accesses),
                fmt_f64(r.report.total_additions),
                fmt_f64(r.report.total_macs),
                fmt_f64(r.ratios.memory),
                fmt_f64(r.ratios.accesses),
                fmt_f64(r.ratios.additions),
                fmt_f64(r.ratios.macs),
                fmt_opt(r.fom),
            ]
        })
        .collect();
    let baseline_note = format!(
        "k={}, n={}, trainable",
        args.time_steps,
        arch.trainable_layer_count()
    );
    write_csv(
        &args.out.join("cost_table.csv"),
        &[
            ("convention", COUNTING_CONVENTION),
            ("baseline", &baseline_note),
            ("batch_size", &args.batch_size.to_string()),
            ("time_steps", &args.time_steps.to_string()),
        ],
        &header,
        &body,
    )?;

    let json_rows: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            json!({
                "k": r.k,
                "n": r.n,
                "classifier": mode_name(r.mode),
                "report": r.report,
                "ratios": r.ratios,
                "fom": r.fom,
            })
        })
        .collect();
    std::fs::write(
        args.out.join("cost_table.json"),
        serde_json::to_string_pretty(&json!({
            "convention": COUNTING_CONVENTION,
            "baseline": baseline_note,
            "rows": json_rows,
        }))?,
    )?;
    println!("estimate-cost: {} rows -> {}", rows.len(), args.out.display());
    Ok(())
}
