//! Flat key=value run configuration. Diff-able plain text, `#` comments,
//! presets expanded in place so a config file stays a complete record of
//! what ran.

use std::path::Path;

use gpicl::data::NUM_CLASSES;
use gpicl::error::{Error, Result};
use gpicl::meta::{MetaOptimizer, MetaTrainConfig};
use gpicl::models::{Family, ModelConfig};
use gpicl::tasks::PermutationDistribution;

/// Every accepted config key. Orchestration keys (`out_dir`, `run_name`,
/// `data_dir`, `preset`) locate things and are excluded from the canonical
/// echo; everything else determines the run's numbers.
pub const VALID_KEYS: [&str; 32] = [
    "preset",
    "family",
    "model_size",
    "layers",
    "heads",
    "key_size",
    "hidden_size",
    "outer_heads",
    "outer_size",
    "mlp_hidden",
    "dataset",
    "data_dir",
    "downscale",
    "eval_datasets",
    "steps",
    "batch_size",
    "seq_len",
    "num_tasks",
    "bias_fraction",
    "optimizer",
    "lr",
    "eps",
    "weight_decay",
    "global_seed",
    "init_seed",
    "log_every",
    "eval_every",
    "eval_batches",
    "eval_batch_size",
    "checkpoint_every",
    "out_dir",
    "run_name",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub family: Family,
    pub model_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub key_size: usize,
    pub hidden_size: usize,
    pub outer_heads: usize,
    pub outer_size: usize,
    pub mlp_hidden: usize,
    pub dataset: String,
    pub data_dir: Option<String>,
    /// side length images are mean-pooled to; 0 keeps native resolution
    pub downscale: usize,
    /// datasets for the unseen-dataset evaluation regime
    pub eval_datasets: Vec<String>,
    pub steps: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub num_tasks: u64,
    pub bias_fraction: f64,
    pub optimizer: MetaOptimizer,
    pub lr: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub global_seed: u64,
    pub init_seed: u64,
    pub log_every: u64,
    pub eval_every: u64,
    pub eval_batches: usize,
    pub eval_batch_size: usize,
    pub checkpoint_every: u64,
    pub out_dir: String,
    pub run_name: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = MetaTrainConfig::default();
        RunConfig {
            family: Family::Transformer,
            model_size: 64,
            layers: 2,
            heads: 4,
            key_size: 16,
            hidden_size: 64,
            outer_heads: 2,
            outer_size: 8,
            mlp_hidden: 64,
            dataset: "mnist".into(),
            data_dir: None,
            downscale: 8,
            eval_datasets: vec!["fashion_mnist".into()],
            steps: t.steps,
            batch_size: t.batch_size,
            seq_len: t.seq_len,
            num_tasks: t.num_tasks,
            bias_fraction: 0.0,
            optimizer: t.optimizer,
            lr: t.lr,
            eps: t.eps,
            weight_decay: t.weight_decay,
            global_seed: t.global_seed,
            init_seed: t.init_seed,
            log_every: t.log_every,
            eval_every: t.eval_every,
            eval_batches: t.eval_batches,
            eval_batch_size: t.eval_batch_size,
            checkpoint_every: t.checkpoint_every,
            out_dir: "runs".into(),
            run_name: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Keys apply top to bottom, so later lines override a preset above
    /// them and a preset clobbers anything written before it.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "preset" => self.apply_preset(value)?,
            "family" => self.family = Family::parse(value)?,
            "model_size" => self.model_size = parse_num(key, value)?,
            "layers" => self.layers = parse_num(key, value)?,
            "heads" => self.heads = parse_num(key, value)?,
            "key_size" => self.key_size = parse_num(key, value)?,
            "hidden_size" => self.hidden_size = parse_num(key, value)?,
            "outer_heads" => self.outer_heads = parse_num(key, value)?,
            "outer_size" => self.outer_size = parse_num(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse_num(key, value)?,
            "dataset" => self.dataset = value.to_string(),
            "data_dir" => self.data_dir = Some(value.to_string()),
            "downscale" => self.downscale = parse_num(key, value)?,
            "eval_datasets" => {
                self.eval_datasets = if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|s| s.trim().to_string()).collect()
                }
            }
            "steps" => self.steps = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "seq_len" => self.seq_len = parse_num(key, value)?,
            "num_tasks" => self.num_tasks = parse_num(key, value)?,
            "bias_fraction" => self.bias_fraction = parse_num(key, value)?,
            "optimizer" => self.optimizer = MetaOptimizer::parse(value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "eps" => self.eps = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "global_seed" => self.global_seed = parse_num(key, value)?,
            "init_seed" => self.init_seed = parse_num(key, value)?,
            "log_every" => self.log_every = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "eval_batches" => self.eval_batches = parse_num(key, value)?,
            "eval_batch_size" => self.eval_batch_size = parse_num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "out_dir" => self.out_dir = value.to_string(),
            "run_name" => self.run_name = Some(value.to_string()),
            _ => {
                return Err(Error::Config(format!(
                    "unknown config key {key:?}; valid keys: {}",
                    VALID_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            // 8x8 grayscale images, two-block transformer, the config that
            // crosses the generalization transition in under an hour on one
            // core.
            "desk-mnist" => {
                *self = RunConfig {
                    data_dir: self.data_dir.clone(),
                    out_dir: self.out_dir.clone(),
                    run_name: self.run_name.clone(),
                    ..RunConfig::default()
                };
                self.bias_fraction = 0.9;
                self.steps = 16_000;
                self.lr = 1e-3;
                self.eval_every = 1_000;
            }
            // Appendix-scale reference values. Not expected to finish on a
            // desk machine: 2^25 tasks, batch 128, sequence length 100 and a
            // [256, 4, 8] transformer are a multi-GPU workload.
            "paper-scale" => {
                *self = RunConfig {
                    data_dir: self.data_dir.clone(),
                    out_dir: self.out_dir.clone(),
                    run_name: self.run_name.clone(),
                    ..RunConfig::default()
                };
                self.model_size = 256;
                self.layers = 4;
                self.heads = 8;
                self.key_size = 32;
                self.hidden_size = 256;
                self.mlp_hidden = 256;
                self.downscale = 0;
                self.steps = 50_000;
                self.batch_size = 128;
                self.seq_len = 100;
                self.num_tasks = 1 << 25;
                self.bias_fraction = 0.9;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?} (desk-mnist, paper-scale)"
                )))
            }
        }
        Ok(())
    }

    /// Sorted key=value lines of every run-determining key. Two runs with
    /// equal canonical text produce byte-identical metrics given the same
    /// data directory contents.
    pub fn canonical_text(&self) -> String {
        let mut kv: Vec<(&str, String)> = vec![
            ("family", self.family.as_str().to_string()),
            ("model_size", self.model_size.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("key_size", self.key_size.to_string()),
            ("hidden_size", self.hidden_size.to_string()),
            ("outer_heads", self.outer_heads.to_string()),
            ("outer_size", self.outer_size.to_string()),
            ("mlp_hidden", self.mlp_hidden.to_string()),
            ("dataset", self.dataset.clone()),
            ("downscale", self.downscale.to_string()),
            ("eval_datasets", self.eval_datasets.join(",")),
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("num_tasks", self.num_tasks.to_string()),
            ("bias_fraction", self.bias_fraction.to_string()),
            ("optimizer", self.optimizer.as_str().to_string()),
            ("lr", self.lr.to_string()),
            ("eps", self.eps.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("global_seed", self.global_seed.to_string()),
            ("init_seed", self.init_seed.to_string()),
            ("log_every", self.log_every.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_batches", self.eval_batches.to_string()),
            ("eval_batch_size", self.eval_batch_size.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        kv.sort();
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// `data_dim` is the flattened input width of the loaded base dataset.
    pub fn model_config(&self, data_dim: usize) -> ModelConfig {
        ModelConfig {
            family: self.family,
            model_size: self.model_size,
            layers: self.layers,
            heads: self.heads,
            key_size: self.key_size,
            hidden_size: self.hidden_size,
            outer_heads: self.outer_heads,
            outer_size: self.outer_size,
            mlp_hidden: self.mlp_hidden,
            input_dim: data_dim + NUM_CLASSES,
            output_dim: NUM_CLASSES,
            max_seq: self.seq_len,
        }
    }

    pub fn train_config(&self) -> MetaTrainConfig {
        MetaTrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            seq_len: self.seq_len,
            num_tasks: self.num_tasks,
            global_seed: self.global_seed,
            init_seed: self.init_seed,
            optimizer: self.optimizer,
            lr: self.lr,
            eps: self.eps,
            weight_decay: self.weight_decay,
            log_every: self.log_every,
            eval_every: self.eval_every,
            eval_batches: self.eval_batches,
            eval_batch_size: self.eval_batch_size,
            checkpoint_every: self.checkpoint_every,
        }
    }

    pub fn distribution(&self) -> Result<PermutationDistribution> {
        if self.bias_fraction == 0.0 {
            Ok(PermutationDistribution::uniform(NUM_CLASSES))
        } else {
            PermutationDistribution::biased(self.bias_fraction, (0..NUM_CLASSES).collect())
        }
    }
}
