//! Throwaway step-time measurement for sizing experiment configs.

use gpicl::data::{random::make_random_dataset, BaseDataset};
use gpicl::meta::{meta_loss_and_grads, MetaTrainConfig};
use gpicl::models::{self, Family, ModelConfig};
use gpicl::optim::{Adam, AdamConfig};
use gpicl::rng::Stream;
use gpicl::tasks::{sample_sequence_batch, PermutationDistribution};

fn time_steps(label: &str, model_cfg: &ModelConfig, base: &BaseDataset, batch: usize, seq: usize, tasks: u64) {
    let cfg = MetaTrainConfig {
        batch_size: batch,
        seq_len: seq,
        num_tasks: tasks,
        ..MetaTrainConfig::default()
    };
    let mut store = models::init_params::<f32>(model_cfg, cfg.init_seed).unwrap();
    let mut opt = Adam::new(AdamConfig::default());
    let dist = PermutationDistribution::uniform(base.num_classes);
    let mut stream = Stream::new(cfg.global_seed, "train-batches", 0);
    // Warm one step, then time ten.
    for _ in 0..1 {
        let b = sample_sequence_batch(base, cfg.num_tasks, &dist, cfg.global_seed, batch, seq, &mut stream, true).unwrap();
        let (_, grads) = meta_loss_and_grads(model_cfg, &store, &b).unwrap();
        opt.step(&mut store, &grads).unwrap();
    }
    let t0 = std::time::Instant::now();
    let n = 10;
    for _ in 0..n {
        let b = sample_sequence_batch(base, cfg.num_tasks, &dist, cfg.global_seed, batch, seq, &mut stream, true).unwrap();
        let (_, grads) = meta_loss_and_grads(model_cfg, &store, &b).unwrap();
        opt.step(&mut store, &grads).unwrap();
    }
    let ms = t0.elapsed().as_millis() as f64 / n as f64;
    eprintln!("{label}: {ms:.1} ms/step");
}

#[test]
#[ignore]
fn timing_probe() {
    let desk_base = make_random_dataset(0, 512, 64, 10).unwrap();
    let desk_tf = ModelConfig::desk(74, 10, 25);
    time_steps("desk transformer b32 t25", &desk_tf, &desk_base, 32, 25, 8192);

    let mut desk_lstm = ModelConfig::desk(74, 10, 25);
    desk_lstm.family = Family::Lstm;
    time_steps("desk lstm b32 t25", &desk_lstm, &desk_base, 32, 25, 8192);

    let small_base = make_random_dataset(1, 512, 16, 10).unwrap();
    let mut small_tf = ModelConfig::desk(26, 10, 20);
    small_tf.model_size = 32;
    small_tf.heads = 2;
    small_tf.key_size = 16;
    time_steps("small transformer b16 t20", &small_tf, &small_base, 16, 20, 1024);
}
