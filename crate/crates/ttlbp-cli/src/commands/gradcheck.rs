//! `ttlbp gradcheck`: compare the reverse interval recursion against the
//! unrolled forward-mode oracle over a toy `(k, n)` grid, plus a
//! finite-difference check of the loss-seed derivative.

use std::path::PathBuf;

use rand::Rng;
use serde_json::json;
use ttlbp::engine::{
    backward_interval, classifier_seed_error, compute_loss, forward_interval,
    oracle_interval_grad, split_intervals, DropoutMasks, GradSet, Model, NetState, StepInputs,
};
use ttlbp::neuron::LifParams;
use ttlbp::rng::rng_from;
use ttlbp::tensor::max_rel_err;
use ttlbp::topology::{init_weights, partition_blocks, LayerSpec, NetworkArch};
use ttlbp::Tensor;

use crate::spec::load_arch;
use crate::tables::fmt_f64;
use crate::{CliError, CliResult};

/// CLI pass threshold; the oracle agreement is usually far tighter.
pub const GRADCHECK_TOLERANCE: f64 = 1e-8;
const REL_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct GradcheckArgs {
    pub arch: Option<PathBuf>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct GridResult {
    pub arch: String,
    pub n: usize,
    pub k: usize,
    pub max_rel_err: f64,
    /// Weight tensor with the largest error ("layer i" or "classifier b").
    pub worst_at: String,
    pub pass: bool,
}

fn builtin_archs() -> Vec<(String, NetworkArch)> {
    vec![
        (
            "fc6".into(),
            NetworkArch {
                input_shape: [1, 1, 4],
                layers: vec![LayerSpec::fully_connected(6)],
                num_classes: 2,
            },
        ),
        (
            "fc5-fc4".into(),
            NetworkArch {
                input_shape: [1, 1, 3],
                layers: vec![
                    LayerSpec::fully_connected(5),
                    LayerSpec::fully_connected(4),
                ],
                num_classes: 3,
            },
        ),
        (
            "conv2-pool-fc4".into(),
            NetworkArch {
                input_shape: [1, 4, 4],
                layers: vec![
                    LayerSpec::conv(2, 2, 1),
                    LayerSpec::avg_pool(2, 2, 2),
                    LayerSpec::fully_connected(4),
                ],
                num_classes: 2,
            },
        ),
    ]
}

fn random_inputs(shape: &[usize; 3], time_steps: usize, seed: u64) -> StepInputs {
    let mut rng = rng_from(seed);
    StepInputs::Sequence(
        (0..time_steps)
            .map(|_| {
                let len: usize = shape.iter().product();
                Tensor::from_vec(&shape[..], (0..len).map(|_| rng.gen_range(0.0..1.0)).collect())
                    .unwrap()
            })
            .collect(),
    )
}

fn grad_err_located(a: &GradSet, b: &GradSet) -> (f64, String) {
    let mut worst = 0.0f64;
    let mut at = String::from("-");
    for (l, (x, y)) in a.layers.iter().zip(b.layers.iter()).enumerate() {
        if let (Some(x), Some(y)) = (x, y) {
            let e = max_rel_err(x, y, REL_FLOOR);
            if e > worst {
                worst = e;
                at = format!("layer {l}");
            }
        }
    }
    for (c, (x, y)) in a.classifiers.iter().zip(b.classifiers.iter()).enumerate() {
        let e = max_rel_err(x, y, REL_FLOOR);
        if e > worst {
            worst = e;
            at = format!("classifier {c}");
        }
    }
    (worst, at)
}

/// Compare engine and oracle gradients across all intervals of one run.
/// `backward_lif` lets the negative-control tests corrupt the backward
/// pass's temporal coefficients while the oracle keeps the true ones.
pub fn check_config(
    arch: &NetworkArch,
    n: usize,
    k: usize,
    time_steps: usize,
    batch: usize,
    seed: u64,
    backward_lif: Option<LifParams>,
) -> CliResult<(f64, String)> {
    let plan = partition_blocks(arch, n).map_err(|e| CliError::Usage(e.to_string()))?;
    let lif = LifParams::with_threshold(0.9, 0.4, 0.5);
    let model = Model::new(arch.clone(), plan.clone(), lif)?;
    let backward_model = match backward_lif {
        Some(p) => Model::new(arch.clone(), plan, p)?,
        None => model.clone(),
    };
    let weights = init_weights(&model.arch, &model.plan, seed)?;
    let mut worst = (0.0f64, String::from("-"));
    for b in 0..batch {
        let input = random_inputs(&model.arch.input_shape, time_steps, seed ^ ((b as u64) << 8));
        let target = b % model.arch.num_classes;
        let mut state = NetState::reset(&model);
        let mut t0 = 0usize;
        for k_actual in split_intervals(time_steps, k) {
            let masks = DropoutMasks::ones(&model);
            let carry = state.clone();
            let hist =
                forward_interval(&model, &weights, &mut state, &input, t0, k_actual, &masks)?;
            let engine = backward_interval(&backward_model, &weights, &hist, target)?;
            let oracle = oracle_interval_grad(
                &model, &weights, &carry, &input, t0, k_actual, target, &masks,
            )
            .map_err(|e| match e {
                ttlbp::Error::OracleGuard(m) => CliError::Usage(format!("refusing: {m}")),
                other => CliError::Runtime(other.to_string()),
            })?;
            let (err, at) = grad_err_located(&engine, &oracle);
            if err > worst.0 {
                worst = (err, at);
            }
            t0 += k_actual;
        }
    }
    Ok(worst)
}

/// Central finite differences of the interval loss in each recorded
/// classifier spike vs the analytic seed, over random instances.
pub fn seed_fd_max_err(instances: usize, seed: u64) -> f64 {
    let mut rng = rng_from(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let nc = rng.gen_range(2..=8);
        let k = rng.gen_range(1..=6);
        let target = rng.gen_range(0..nc);
        let mut spikes: Vec<Tensor> = (0..k)
            .map(|_| {
                Tensor::from_vec(
                    &[nc],
                    (0..nc)
                        .map(|_| if rng.gen::<f64>() < 0.5 { 1.0 } else { 0.0 })
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let refs: Vec<&Tensor> = spikes.iter().collect();
        let analytic = classifier_seed_error(&refs, target).unwrap();
        let eps = 1e-6;
        let t_probe = rng.gen_range(0..k);
        for i in 0..nc {
            let orig = spikes[t_probe].data()[i];
            spikes[t_probe].data_mut()[i] = orig + eps;
            let lp = compute_loss(&spikes.iter().collect::<Vec<_>>(), target).unwrap();
            spikes[t_probe].data_mut()[i] = orig - eps;
            let lm = compute_loss(&spikes.iter().collect::<Vec<_>>(), target).unwrap();
            spikes[t_probe].data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let denom = fd.abs().max(analytic.data()[i].abs()).max(1e-9);
            worst = worst.max((fd - analytic.data()[i]).abs() / denom);
        }
    }
    worst
}

pub fn run_grid(
    archs: &[(String, NetworkArch)],
    seed: u64,
) -> CliResult<Vec<GridResult>> {
    let time_steps = 4;
    let mut results = Vec::new();
    for (name, arch) in archs {
        let trainable = arch.trainable_layer_count();
        let mut ns = vec![1usize, 2, trainable];
        ns.sort_unstable();
        ns.dedup();
        let mut ks = vec![1usize, 2, time_steps];
        ks.sort_unstable();
        ks.dedup();
        for &n in ns.iter().filter(|&&n| n >= 1 && n <= trainable) {
            for &k in &ks {
                let (err, at) = check_config(arch, n, k, time_steps, 2, seed, None)?;
                results.push(GridResult {
                    arch: name.clone(),
                    n,
                    k,
                    max_rel_err: err,
                    worst_at: at,
                    pass: err <= GRADCHECK_TOLERANCE,
                });
            }
        }
    }
    Ok(results)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let archs = match &args.arch {
        Some(path) => vec![(path.display().to_string(), load_arch(path)?)],
        None => builtin_archs(),
    };
    let results = run_grid(&archs, args.seed)?;
    let fd_err = seed_fd_max_err(100, args.seed ^ 0xFD);
    let fd_pass = fd_err <= 1e-6;

    println!(
        "{:<16} {:>3} {:>3} {:>12}  {:<13} status",
        "arch", "n", "k", "max_rel_err", "worst_at"
    );
    for r in &results {
        println!(
            "{:<16} {:>3} {:>3} {:>12.3e}  {:<13} {}",
            r.arch,
            r.n,
            r.k,
            r.max_rel_err,
            r.worst_at,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    println!(
        "loss-seed finite differences: max rel err {} ({})",
        fmt_f64(fd_err),
        if fd_pass { "pass" } else { "FAIL" }
    );

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(
            out.join("gradcheck.json"),
            serde_json::to_string_pretty(&json!({
                "tolerance": GRADCHECK_TOLERANCE,
                "grid": results,
                "loss_seed_fd_max_rel_err": fd_err,
            }))?,
        )?;
    }

    let all_pass = results.iter().all(|r| r.pass) && fd_pass;
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Runtime(
            "gradient check failed; see the report above".into(),
        ))
    }
}
