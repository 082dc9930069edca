//! Meta-training: the sequential multi-task objective (mean cross entropy
//! over every position of every sequence in the batch), the outer training
//! loop with its three-regime evaluation schedule, loss-plateau detection,
//! and meta-gradient diagnostics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use crate::checkpoint;
use crate::data::BaseDataset;
use crate::error::{Error, Result};
use crate::eval::{meta_test, LearningCurve, MetricsWriter, Regime, UNSEEN_TASK_SEED_FLIP};
use crate::graph::{Graph, NodeId};
use crate::models::{forward, init_params, ModelConfig};
use crate::optim::{Adam, AdamConfig, SignEma};
use crate::rng::Stream;
use crate::store::ParamStore;
use crate::tasks::{sample_sequence_batch, PermutationDistribution, SequenceBatch};
use crate::tensor::{Scalar, Tensor};

/// Hard ceiling on outer steps; a config asking for more is rejected.
pub const STEPS_CAP: u64 = 50_000;

/// Task-count used when evaluating on tasks the model never meta-trained
/// on; large enough that collisions with anything seen are irrelevant.
pub const UNSEEN_EVAL_TASKS: u64 = 1 << 20;

// ---- objective ------------------------------------------------------------

/// Mean cross entropy over all positions and sequences: every position is
/// a query against the context before it.
pub fn meta_loss_node<E: Scalar>(
    cfg: &ModelConfig,
    g: &mut Graph<E>,
    ids: &BTreeMap<String, NodeId>,
    tokens: &Tensor<E>,
    targets: &[usize],
) -> Result<NodeId> {
    if tokens.rank() != 3 {
        return Err(Error::Shape(format!(
            "meta loss expects [b, t, d] tokens, got {:?}",
            tokens.shape()
        )));
    }
    let (b, t) = (tokens.shape()[0], tokens.shape()[1]);
    if targets.len() != b * t {
        return Err(Error::Shape(format!(
            "{} targets for a {b}x{t} batch",
            targets.len()
        )));
    }
    let tok = g.constant(tokens.clone());
    let logits = forward(cfg, g, ids, tok)?;
    let flat = g.reshape(logits, &[b * t, cfg.output_dim])?;
    g.cross_entropy(flat, targets, &vec![true; b * t])
}

/// Loss value and parameter gradients for one batch.
pub fn meta_loss_and_grads(
    cfg: &ModelConfig,
    store: &ParamStore<f32>,
    batch: &SequenceBatch,
) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
    let mut g = Graph::new();
    let ids = g.load_store(store)?;
    let loss = meta_loss_node(cfg, &mut g, &ids, &batch.tokens, &batch.targets)?;
    let value = g.value(loss).data()[0].to_f64();
    let grads = g.backward(loss)?;
    Ok((value, grads))
}

// ---- plateau detection ----------------------------------------------------

pub const PLATEAU_EMA: f64 = 0.99;
pub const PLATEAU_MARGIN: f64 = 0.3;
pub const PLATEAU_SUSTAIN: usize = 100;

/// First logged step at which the smoothed train loss dips below
/// ln(num_classes) - margin and stays below it for `PLATEAU_SUSTAIN`
/// consecutive logged entries. None means the run never escaped; compare
/// through [`plateau_or_inf`] so that reads as an infinite plateau.
pub fn plateau_length(history: &[(u64, f64)], num_classes: usize) -> Option<u64> {
    let threshold = (num_classes as f64).ln() - PLATEAU_MARGIN;
    let mut ema = f64::NAN;
    let mut streak = 0usize;
    let mut begin = 0u64;
    for &(step, loss) in history {
        ema = if ema.is_nan() { loss } else { PLATEAU_EMA * ema + (1.0 - PLATEAU_EMA) * loss };
        if ema <= threshold {
            if streak == 0 {
                begin = step;
            }
            streak += 1;
            if streak >= PLATEAU_SUSTAIN {
                return Some(begin);
            }
        } else {
            streak = 0;
        }
    }
    None
}

pub fn plateau_or_inf(p: Option<u64>) -> f64 {
    p.map_or(f64::INFINITY, |s| s as f64)
}

// ---- gradient diagnostics -------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GradDiagnostics {
    pub cosine: f64,
    pub norm_a: f64,
    pub norm_b: f64,
}

/// Cosine similarity between two gradient sets over the concatenation of
/// all parameters; zero whenever either side has zero norm.
pub fn grad_cosine(
    a: &BTreeMap<String, Tensor<f32>>,
    b: &BTreeMap<String, Tensor<f32>>,
) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (name, ta) in a {
        let Some(tb) = b.get(name) else { continue };
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            dot += x as f64 * y as f64;
            na += (x as f64).powi(2);
            nb += (y as f64).powi(2);
        }
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Meta-gradient agreement between two independent batches; low cosine at
/// chance-level loss is the signature of the plateau's noisy gradient.
pub fn gradient_diagnostics(
    cfg: &ModelConfig,
    store: &ParamStore<f32>,
    batch_a: &SequenceBatch,
    batch_b: &SequenceBatch,
) -> Result<GradDiagnostics> {
    let (_, ga) = meta_loss_and_grads(cfg, store, batch_a)?;
    let (_, gb) = meta_loss_and_grads(cfg, store, batch_b)?;
    let norm = |g: &BTreeMap<String, Tensor<f32>>| {
        g.values()
            .flat_map(|t| t.data().iter().map(|&v| (v as f64).powi(2)))
            .sum::<f64>()
            .sqrt()
    };
    Ok(GradDiagnostics { cosine: grad_cosine(&ga, &gb), norm_a: norm(&ga), norm_b: norm(&gb) })
}

// ---- the outer loop -------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaOptimizer {
    Adam,
    SignEma,
}

impl MetaOptimizer {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetaOptimizer::Adam => "adam",
            MetaOptimizer::SignEma => "sign_ema",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(MetaOptimizer::Adam),
            "sign_ema" => Ok(MetaOptimizer::SignEma),
            other => Err(Error::Config(format!(
                "unknown optimizer {other:?} (adam, sign_ema)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaTrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub num_tasks: u64,
    /// seeds the task set, the batch stream, and the evaluation streams
    pub global_seed: u64,
    pub init_seed: u64,
    pub optimizer: MetaOptimizer,
    pub lr: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub log_every: u64,
    pub eval_every: u64,
    pub eval_batches: usize,
    pub eval_batch_size: usize,
    /// 0 disables intermediate checkpoints; the final one is always written
    pub checkpoint_every: u64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        MetaTrainConfig {
            steps: 2_000,
            batch_size: 32,
            seq_len: 25,
            num_tasks: 1 << 13,
            global_seed: 0,
            init_seed: 0,
            optimizer: MetaOptimizer::Adam,
            lr: 1e-4,
            eps: 1e-8,
            weight_decay: 0.0,
            log_every: 10,
            eval_every: 500,
            eval_batches: 2,
            eval_batch_size: 32,
            checkpoint_every: 0,
        }
    }
}

impl MetaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.steps > STEPS_CAP {
            return Err(Error::Config(format!(
                "steps must be in 1..={STEPS_CAP}, got {}",
                self.steps
            )));
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(Error::Config("batch_size and seq_len must be positive".into()));
        }
        if self.num_tasks == 0 {
            return Err(Error::Config("num_tasks must be positive".into()));
        }
        if self.log_every == 0 || self.eval_every == 0 {
            return Err(Error::Config("log_every and eval_every must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive and finite, got {}", self.lr)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive and finite, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Evaluation datasets for the loop: `seen` is the held-out split of the
/// meta-training dataset, `unseen` are datasets never meta-trained on.
pub struct EvalSuite<'a> {
    pub seen: &'a BaseDataset,
    pub unseen: Vec<&'a BaseDataset>,
}

pub struct RunArtifacts {
    pub store: ParamStore<f32>,
    /// (step, train loss) at every logged step
    pub history: Vec<(u64, f64)>,
    /// (series, dataset, curve) from the final evaluation pass
    pub final_curves: Vec<(String, String, LearningCurve)>,
}

enum Outer {
    Adam(Box<Adam>),
    Sign(SignEma),
}

fn run_eval(
    model_cfg: &ModelConfig,
    cfg: &MetaTrainConfig,
    store: &ParamStore<f32>,
    suite: &EvalSuite,
    dist: &PermutationDistribution,
    step: u64,
    writer: &mut MetricsWriter,
) -> Result<Vec<(String, String, LearningCurve)>> {
    let uniform = PermutationDistribution::uniform(model_cfg.output_dim);
    let mut curves = Vec::new();
    let mut jobs: Vec<(Regime, &BaseDataset, u64, &PermutationDistribution, u64)> = vec![
        (Regime::SeenTasks, suite.seen, cfg.num_tasks, dist, cfg.global_seed),
        (
            Regime::UnseenTasks,
            suite.seen,
            UNSEEN_EVAL_TASKS,
            &uniform,
            cfg.global_seed ^ UNSEEN_TASK_SEED_FLIP,
        ),
    ];
    for base in &suite.unseen {
        jobs.push((
            Regime::UnseenDataset,
            *base,
            UNSEEN_EVAL_TASKS,
            &uniform,
            cfg.global_seed ^ UNSEEN_TASK_SEED_FLIP,
        ));
    }
    for (regime, base, num_tasks, d, task_seed) in jobs {
        let mut stream = Stream::new(
            cfg.global_seed,
            &format!("eval/{}/{}", regime.as_str(), base.name),
            step,
        );
        let curve = meta_test(
            model_cfg,
            store,
            base,
            num_tasks,
            d,
            task_seed,
            cfg.eval_batches,
            cfg.eval_batch_size,
            cfg.seq_len,
            &mut stream,
        )?;
        let series = regime.as_str();
        writer.record(step, series, &base.name, "acc_first", curve.first_accuracy())?;
        writer.record(step, series, &base.name, "acc_last", curve.last_accuracy())?;
        writer.record(step, series, &base.name, "delta", curve.delta())?;
        writer.record(step, series, &base.name, "mean_loss", curve.mean_loss())?;
        curves.push((series.to_string(), base.name.clone(), curve));
    }
    writer.flush()?;
    Ok(curves)
}

fn write_config(
    path: &Path,
    model_cfg: &ModelConfig,
    cfg: &MetaTrainConfig,
    train_base: &BaseDataset,
    dist: &PermutationDistribution,
) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    let mut kv: Vec<(String, String)> = vec![
        ("family".into(), model_cfg.family.as_str().into()),
        ("model_size".into(), model_cfg.model_size.to_string()),
        ("layers".into(), model_cfg.layers.to_string()),
        ("heads".into(), model_cfg.heads.to_string()),
        ("key_size".into(), model_cfg.key_size.to_string()),
        ("hidden_size".into(), model_cfg.hidden_size.to_string()),
        ("outer_heads".into(), model_cfg.outer_heads.to_string()),
        ("outer_size".into(), model_cfg.outer_size.to_string()),
        ("mlp_hidden".into(), model_cfg.mlp_hidden.to_string()),
        ("input_dim".into(), model_cfg.input_dim.to_string()),
        ("output_dim".into(), model_cfg.output_dim.to_string()),
        ("max_seq".into(), model_cfg.max_seq.to_string()),
        ("dataset".into(), train_base.name.clone()),
        ("steps".into(), cfg.steps.to_string()),
        ("batch_size".into(), cfg.batch_size.to_string()),
        ("seq_len".into(), cfg.seq_len.to_string()),
        ("num_tasks".into(), cfg.num_tasks.to_string()),
        ("bias_fraction".into(), dist.bias_fraction.to_string()),
        ("global_seed".into(), cfg.global_seed.to_string()),
        ("init_seed".into(), cfg.init_seed.to_string()),
        ("optimizer".into(), cfg.optimizer.as_str().into()),
        ("lr".into(), cfg.lr.to_string()),
        ("eps".into(), cfg.eps.to_string()),
        ("weight_decay".into(), cfg.weight_decay.to_string()),
    ];
    kv.sort();
    for (k, v) in kv {
        writeln!(f, "{k}={v}")?;
    }
    f.flush()?;
    Ok(())
}

/// Meta-train a model on the augmented task distribution over `train_base`,
/// logging train loss and the three-regime evaluations into `out_dir`
/// (metrics.csv, metrics.jsonl, config.txt, ckpt-*.gpck). A non-finite
/// loss aborts with the metrics flushed so the divergence point survives.
pub fn meta_train(
    model_cfg: &ModelConfig,
    cfg: &MetaTrainConfig,
    train_base: &BaseDataset,
    suite: &EvalSuite,
    dist: &PermutationDistribution,
    out_dir: &Path,
) -> Result<RunArtifacts> {
    model_cfg.validate()?;
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    write_config(&out_dir.join("config.txt"), model_cfg, cfg, train_base, dist)?;
    let mut writer = MetricsWriter::create(out_dir)?;

    let mut store = init_params::<f32>(model_cfg, cfg.init_seed)?;
    let mut outer = match cfg.optimizer {
        MetaOptimizer::Adam => Outer::Adam(Box::new(Adam::new(AdamConfig {
            lr: cfg.lr,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        }))),
        MetaOptimizer::SignEma => Outer::Sign(SignEma::new(cfg.lr, 0.9)),
    };
    let mut batch_stream = Stream::new(cfg.global_seed, "train-batches", 0);
    let mut history = Vec::new();
    let mut final_curves = Vec::new();

    for step in 0..cfg.steps {
        let batch = sample_sequence_batch(
            train_base,
            cfg.num_tasks,
            dist,
            cfg.global_seed,
            cfg.batch_size,
            cfg.seq_len,
            &mut batch_stream,
            true,
        )?;
        let step_result = meta_loss_and_grads(model_cfg, &store, &batch).and_then(|(loss, grads)| {
            match &mut outer {
                Outer::Adam(o) => o.step(&mut store, &grads)?,
                Outer::Sign(o) => o.step(&mut store, &grads)?,
            }
            Ok(loss)
        });
        let loss = match step_result {
            Ok(loss) => loss,
            Err(e) => {
                writer.flush()?;
                return Err(e);
            }
        };
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            writer.record(step, "train", &train_base.name, "loss", loss)?;
            history.push((step, loss));
        }
        let last = step + 1 == cfg.steps;
        if (step > 0 && step % cfg.eval_every == 0) || last {
            let curves = run_eval(model_cfg, cfg, &store, suite, dist, step, &mut writer)?;
            if last {
                final_curves = curves;
            }
        }
        if cfg.checkpoint_every > 0 && step > 0 && step % cfg.checkpoint_every == 0 {
            checkpoint::save(&store, &out_dir.join(format!("ckpt-{step:06}.gpck")))?;
        }
    }
    checkpoint::save(&store, &out_dir.join("ckpt-final.gpck"))?;
    writer.flush()?;
    Ok(RunArtifacts { store, history, final_curves })
}
