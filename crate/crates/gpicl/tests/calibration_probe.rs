//! Throwaway run-length/learning-rate calibration. Env-driven, ignored by
//! default; prints the loss trajectory and final curves for one config.

use std::path::{Path, PathBuf};

use gpicl::data::idx::load_idx_pair;
use gpicl::data::synth::generate_all;
use gpicl::meta::{meta_train, EvalSuite, MetaOptimizer, MetaTrainConfig};
use gpicl::models::{Family, ModelConfig};
use gpicl::tasks::PermutationDistribution;

fn env_or(key: &str, default: &str) -> String {
    std::env::var(key).unwrap_or_else(|_| default.to_string())
}

fn load_pair(root: &Path, name: &str, side: usize) -> (gpicl::data::BaseDataset, gpicl::data::BaseDataset) {
    let dir = root.join(name);
    load_idx_pair(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        name,
        Some(side),
    )
    .unwrap()
}

#[test]
#[ignore]
fn calibration_probe() {
    let data_root = PathBuf::from(env_or("GPICL_PROBE_DATA", "/root/work/data"));
    if !data_root.join("mnist").exists() {
        generate_all(&data_root, 0, 4096, 1024).unwrap();
    }
    let side: usize = env_or("GPICL_PROBE_SIDE", "8").parse().unwrap();
    let (mnist_train, mnist_test) = load_pair(&data_root, "mnist", side);
    let (_, fashion_test) = load_pair(&data_root, "fashion_mnist", side);

    let lr: f64 = env_or("GPICL_PROBE_LR", "1e-3").parse().unwrap();
    let steps: u64 = env_or("GPICL_PROBE_STEPS", "4000").parse().unwrap();
    let bias: f64 = env_or("GPICL_PROBE_BIAS", "0.9").parse().unwrap();
    let tasks: u64 = env_or("GPICL_PROBE_TASKS", "8192").parse().unwrap();
    let family = match env_or("GPICL_PROBE_FAMILY", "transformer").as_str() {
        "lstm" => Family::Lstm,
        "outer" => Family::OuterLstm,
        _ => Family::Transformer,
    };
    let seq_len: usize = env_or("GPICL_PROBE_SEQ", "25").parse().unwrap();

    let n_x = side * side;
    let mut model_cfg = ModelConfig::desk(n_x + 10, 10, seq_len);
    model_cfg.family = family;
    model_cfg.input_dim = n_x + 10;

    let cfg = MetaTrainConfig {
        steps,
        batch_size: 32,
        seq_len,
        num_tasks: tasks,
        global_seed: 0,
        init_seed: 0,
        optimizer: MetaOptimizer::Adam,
        lr,
        eps: 1e-8,
        weight_decay: 0.0,
        log_every: 50,
        eval_every: 1000,
        eval_batches: 2,
        eval_batch_size: 32,
        checkpoint_every: 0,
    };
    let dist = if bias > 0.0 {
        PermutationDistribution::biased(bias, (0..10).collect()).unwrap()
    } else {
        PermutationDistribution::uniform(10)
    };
    let suite = EvalSuite {
        seen: &mnist_test,
        unseen: vec![&fashion_test],
    };
    let out = PathBuf::from(env_or("GPICL_PROBE_OUT", "/root/work/probe-run"));
    let _ = std::fs::remove_dir_all(&out);
    std::fs::create_dir_all(&out).unwrap();

    let t0 = std::time::Instant::now();
    let arts = meta_train(&model_cfg, &cfg, &mnist_train, &suite, &dist, &out).unwrap();
    eprintln!("total {:.1}s", t0.elapsed().as_secs_f64());
    for (step, loss) in arts.history.iter().filter(|(s, _)| s % 500 == 0 || *s == steps) {
        eprintln!("step {step:5}  train loss {loss:.4}");
    }
    for (series, dataset, curve) in &arts.final_curves {
        eprintln!(
            "{series:15} {dataset:14} first {:.3}  last {:.3}  delta {:+.3}  loss {:.3}",
            curve.first_accuracy(),
            curve.last_accuracy(),
            curve.delta(),
            curve.mean_loss()
        );
    }
}
