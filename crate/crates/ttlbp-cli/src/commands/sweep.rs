//! `ttlbp sweep`: train every `(k, n)` cell at desk scale, join with the
//! analytical cost ratios, rank by figure of merit.

use std::path::PathBuf;

use rayon::prelude::*;
use serde_json::json;
use ttlbp::costmodel::{fom, COUNTING_CONVENTION};
use ttlbp::engine::TrainConfig;
use ttlbp::rng::derive_seed;
use ttlbp::topology::ClassifierMode;

use crate::commands::estimate::{estimate_rows, Sparsity};
use crate::commands::parse_usize_list;
use crate::fit::fit;
use crate::spec::{build_model, config_line, load_arch, load_data, parse_classifier, ConfigOverlay};
use crate::tables::{fmt_f64, fmt_opt, write_csv};
use crate::{CliError, CliResult};

const SEED_TAG_CELL: u64 = 0x43454c4c;

#[derive(Clone, Debug)]
pub struct SweepArgs {
    pub arch: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub k_list: String,
    pub n_list: String,
    pub epochs: usize,
    pub seed: u64,
    pub classifier: String,
}

#[derive(Clone, Debug)]
struct CellResult {
    k: usize,
    n: usize,
    accuracy: Option<f64>,
    error: Option<String>,
}

/// Ranking: ascending figure of merit; ties break toward smaller k, then
/// smaller n; cells without a merit value (failed runs) sink to the bottom.
pub fn rank_order(
    a: (Option<f64>, usize, usize),
    b: (Option<f64>, usize, usize),
) -> std::cmp::Ordering {
    match (a.0, b.0) {
        (Some(x), Some(y)) => x
            .partial_cmp(&y)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.1.cmp(&b.1).then(a.2.cmp(&b.2)),
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let arch = load_arch(&args.arch)?;
    let dataset = load_data(&args.data)?;
    let ks = parse_usize_list(&args.k_list, "--k")?;
    let ns = parse_usize_list(&args.n_list, "--n")?;
    let mode = parse_classifier(&args.classifier)?;

    let mut base_cfg = TrainConfig {
        time_steps: dataset.time_steps,
        classifier_mode: mode,
        ..TrainConfig::default()
    };
    base_cfg.k = base_cfg.k.min(base_cfg.time_steps);
    if let Some(path) = &args.config {
        ConfigOverlay::from_file(path)?.apply(&mut base_cfg);
    }
    base_cfg.seed = args.seed;
    base_cfg.classifier_mode = mode;

    // Every cell trains in isolation on its own derived seed; the grid runs
    // on the rayon pool and results assemble in cell order.
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for &n in &ns {
        for &k in &ks {
            cells.push((k, n));
        }
    }
    let all_layers = arch.trainable_layer_count();
    let baseline_cell = (dataset.time_steps, all_layers);

    let run_cell = |&(k, n): &(usize, usize), cell_mode: ClassifierMode| -> CellResult {
        let mut cfg = base_cfg.clone();
        cfg.k = k;
        cfg.n = n;
        cfg.classifier_mode = cell_mode;
        cfg.seed = derive_seed(
            args.seed,
            SEED_TAG_CELL,
            &[k as u64, n as u64, matches!(cell_mode, ClassifierMode::FrozenRandom) as u64],
        );
        let outcome = build_model(&arch, &cfg)
            .and_then(|model| fit(&model, &cfg, &dataset, args.epochs));
        match outcome {
            Ok(Ok(done)) => CellResult {
                k,
                n,
                accuracy: Some(done.final_test_acc.unwrap_or(done.final_train_acc)),
                error: None,
            },
            Ok(Err(abort)) => CellResult {
                k,
                n,
                accuracy: None,
                error: Some(abort.message),
            },
            Err(e) => CellResult {
                k,
                n,
                accuracy: None,
                error: Some(e.to_string()),
            },
        }
    };

    let results: Vec<CellResult> = cells.par_iter().map(|cell| run_cell(cell, mode)).collect();
    // The normalization baseline always trains, reused if it is a grid cell
    // in trainable mode.
    let baseline_result = if mode == ClassifierMode::Trainable
        && cells.contains(&baseline_cell)
    {
        results
            .iter()
            .find(|r| (r.k, r.n) == baseline_cell)
            .cloned()
            .expect("baseline cell present")
    } else {
        run_cell(&baseline_cell, ClassifierMode::Trainable)
    };
    let baseline_acc = baseline_result.accuracy.ok_or_else(|| {
        CliError::Runtime(format!(
            "baseline cell (k={}, n={}) failed: {}",
            baseline_cell.0,
            baseline_cell.1,
            baseline_result.error.unwrap_or_default()
        ))
    })?;

    // Cost ratios for the same grid.
    let sparsity = Sparsity {
        per_layer: vec![1.0; arch.layers.len()],
        per_block_fallback: 1.0,
        per_block: None,
    };
    let (_, cost_rows) = estimate_rows(
        &arch,
        &ks,
        &ns,
        &[mode],
        dataset.time_steps,
        base_cfg.batch_size,
        &sparsity,
        None,
    )?;

    #[derive(Clone, Debug)]
    struct Joined {
        k: usize,
        n: usize,
        accuracy: Option<f64>,
        accuracy_loss: Option<f64>,
        ratios: ttlbp::costmodel::CostRatios,
        fom: Option<f64>,
        error: Option<String>,
    }
    let mut joined: Vec<Joined> = results
        .iter()
        .map(|cell| {
            let cost = cost_rows
                .iter()
                .find(|r| r.k == cell.k && r.n == cell.n)
                .expect("cost row for every cell");
            let accuracy_loss = cell.accuracy.map(|a| baseline_acc - a);
            Joined {
                k: cell.k,
                n: cell.n,
                accuracy: cell.accuracy,
                accuracy_loss,
                ratios: cost.ratios,
                fom: accuracy_loss.map(|al| fom(al, cost.ratios)),
                error: cell.error.clone(),
            }
        })
        .collect();

    joined.sort_by(|a, b| rank_order((a.fom, a.k, a.n), (b.fom, b.k, b.n)));

    std::fs::create_dir_all(&args.out)?;
    let cfg_json = config_line(&base_cfg);
    let header: Vec<String> = [
        "rank",
        "k",
        "n",
        "classifier",
        "accuracy",
        "accuracy_loss",
        "ratio_memory",
        "ratio_accesses",
        "ratio_additions",
        "ratio_macs",
        "fom",
        "best",
        "status",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let body: Vec<Vec<String>> = joined
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                (i + 1).to_string(),
                r.k.to_string(),
                r.n.to_string(),
                args.classifier.clone(),
                fmt_opt(r.accuracy),
                fmt_opt(r.accuracy_loss),
                fmt_f64(r.ratios.memory),
                fmt_f64(r.ratios.accesses),
                fmt_f64(r.ratios.additions),
                fmt_f64(r.ratios.macs),
                fmt_opt(r.fom),
                if i == 0 && r.fom.is_some() { "*".into() } else { String::new() },
                r.error.clone().unwrap_or_else(|| "ok".into()),
            ]
        })
        .collect();
    write_csv(
        &args.out.join("sweep.csv"),
        &[
            ("config", &cfg_json),
            ("convention", COUNTING_CONVENTION),
            ("baseline_accuracy", &fmt_f64(baseline_acc)),
        ],
        &header,
        &body,
    )?;
    let json_rows: Vec<serde_json::Value> = joined
        .iter()
        .enumerate()
        .map(|(i, r)| {
            json!({
                "rank": i + 1,
                "k": r.k,
                "n": r.n,
                "classifier": args.classifier,
                "accuracy": r.accuracy,
                "accuracy_loss": r.accuracy_loss,
                "ratios": r.ratios,
                "fom": r.fom,
                "status": r.error.clone().unwrap_or_else(|| "ok".into()),
            })
        })
        .collect();
    std::fs::write(
        args.out.join("sweep.json"),
        serde_json::to_string_pretty(&json!({
            "config": base_cfg,
            "baseline_accuracy": baseline_acc,
            "rows": json_rows,
        }))?,
    )?;
    println!(
        "sweep: {} cells -> {} (best: k={}, n={})",
        joined.len(),
        args.out.display(),
        joined[0].k,
        joined[0].n
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::rank_order;
    use std::cmp::Ordering;

    #[test]
    fn ties_break_by_smaller_k_then_smaller_n() {
        assert_eq!(
            rank_order((Some(1.0), 2, 4), (Some(1.0), 10, 1)),
            Ordering::Less
        );
        assert_eq!(
            rank_order((Some(1.0), 2, 4), (Some(1.0), 2, 1)),
            Ordering::Greater
        );
        assert_eq!(rank_order((Some(0.5), 10, 4), (Some(1.0), 1, 1)), Ordering::Less);
        assert_eq!(rank_order((None, 1, 1), (Some(9.0), 20, 8)), Ordering::Greater);
    }
}
