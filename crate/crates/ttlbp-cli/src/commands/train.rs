//! `ttlbp train`: run epochs, log deterministic per-epoch metrics, save a
//! checkpoint and harvested firing rates.

use std::path::PathBuf;

use serde_json::json;
use ttlbp::engine::TrainConfig;

use crate::fit::{fit, EpochRow};
use crate::spec::{build_model, config_hash, config_line, load_arch, load_data, parse_classifier, ConfigOverlay};
use crate::tables::{fmt_f64, fmt_opt, write_csv};
use crate::{CliError, CliResult};

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub arch: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub epochs: usize,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub classifier: Option<String>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub dropout: Option<f64>,
    pub time_steps: Option<usize>,
}

/// Resolve the effective config: built-in default, then the dataset's
/// declared time steps, then the config file, then CLI flags.
pub fn resolve_config(args: &TrainArgs, dataset_time_steps: usize) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    cfg.time_steps = dataset_time_steps;
    cfg.k = cfg.k.min(cfg.time_steps);
    if let Some(path) = &args.config {
        ConfigOverlay::from_file(path)?.apply(&mut cfg);
    }
    let flags = ConfigOverlay {
        k: args.k,
        n: args.n,
        time_steps: args.time_steps,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        momentum: args.momentum,
        dropout_rate: args.dropout,
        seed: args.seed,
        classifier_mode: match &args.classifier {
            Some(s) => Some(parse_classifier(s)?),
            None => None,
        },
        lr_decay: None,
        lif: None,
    };
    flags.apply(&mut cfg);
    Ok(cfg)
}

pub fn metrics_rows(rows: &[EpochRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let blocks = rows.first().map(|r| r.block_losses.len()).unwrap_or(0);
    let mut header = vec!["epoch".to_string(), "lr".to_string()];
    for b in 0..blocks {
        header.push(format!("loss_block_{b}"));
    }
    header.push("train_acc".to_string());
    header.push("test_acc".to_string());
    let body = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.epoch.to_string(), fmt_f64(r.lr)];
            row.extend(r.block_losses.iter().map(|&l| fmt_f64(l)));
            row.push(fmt_f64(r.train_acc));
            row.push(fmt_opt(r.test_acc));
            row
        })
        .collect();
    (header, body)
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let arch = load_arch(&args.arch)?;
    let dataset = load_data(&args.data)?;
    let cfg = resolve_config(args, dataset.time_steps)?;
    let model = build_model(&arch, &cfg)?;
    if dataset.normalized_inputs > 0 {
        eprintln!(
            "warning: {} input image(s) were rescaled into [0, 1]",
            dataset.normalized_inputs
        );
    }
    std::fs::create_dir_all(&args.out)?;

    let outcome = match fit(&model, &cfg, &dataset, args.epochs)? {
        Ok(outcome) => outcome,
        Err(abort) => {
            let path = args.out.join("diagnostic.json");
            std::fs::write(&path, serde_json::to_string_pretty(&abort.diagnostic)?)?;
            return Err(CliError::Runtime(format!(
                "{} (diagnostic snapshot: {})",
                abort.message,
                path.display()
            )));
        }
    };

    let cfg_json = config_line(&cfg);
    let (header, body) = metrics_rows(&outcome.rows);
    write_csv(
        &args.out.join("metrics.csv"),
        &[("config", &cfg_json)],
        &header,
        &body,
    )?;
    write_csv(
        &args.out.join("timing.csv"),
        &[
            ("config", &cfg_json),
            ("note", "wall-clock timings; excluded from determinism guarantees"),
        ],
        &["epoch".to_string(), "wall_s".to_string()],
        &outcome
            .rows
            .iter()
            .map(|r| vec![r.epoch.to_string(), fmt_f64(r.wall_s)])
            .collect::<Vec<_>>(),
    )?;

    let checkpoint = json!({
        "version": 1,
        "epochs_completed": args.epochs,
        "config_hash": config_hash(&cfg),
        "config": cfg,
        "weights": outcome.weights,
    });
    std::fs::write(
        args.out.join("checkpoint.json"),
        serde_json::to_string(&checkpoint)?,
    )?;
    std::fs::write(
        args.out.join("firing_rates.json"),
        serde_json::to_string_pretty(&json!({
            "config": cfg,
            "sparsity": outcome.rates,
        }))?,
    )?;

    println!(
        "train: {} epochs, final train_acc={}{}",
        args.epochs,
        fmt_f64(outcome.final_train_acc),
        match outcome.final_test_acc {
            Some(t) => format!(", test_acc={}", fmt_f64(t)),
            None => String::new(),
        }
    );
    Ok(())
}
