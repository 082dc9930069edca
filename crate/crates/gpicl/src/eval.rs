//! Forward-only evaluation: accuracy-versus-position curves with normal
//! confidence intervals, the regime split (seen tasks, unseen tasks,
//! unseen datasets), phase classification from curve deltas, final-position
//! method comparisons, cluster splitting for sweep outcomes, and the
//! metrics log every run writes.

use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use crate::data::BaseDataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{forward, ModelConfig};
use crate::rng::Stream;
use crate::store::ParamStore;
use crate::tasks::{
    raw_sequence, sample_sequence_batch, task_from_index, tokenize_sequence,
    PermutationDistribution, SequenceBatch,
};
use crate::tensor::Tensor;

pub const CI95_Z: f64 = 1.96;

/// An accuracy curve must climb at least this much, first position to last,
/// before the run counts as learning rather than memorizing.
pub const PHASE_DELTA: f64 = 0.05;

/// Unseen-task evaluations re-key the task stream with this flip so their
/// projections are disjoint from every training index with probability 1.
pub const UNSEEN_TASK_SEED_FLIP: u64 = 0x9e37_79b9_7f4a_7c15;

// ---- metrics log ----------------------------------------------------------

/// Appends one row per scalar to metrics.csv and metrics.jsonl side by side.
/// The CSV is the stable interface (step,series,dataset,metric,value); the
/// JSONL mirror exists for tools that want typed rows.
pub struct MetricsWriter {
    csv: BufWriter<File>,
    jsonl: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        let mut csv = BufWriter::new(File::create(dir.join("metrics.csv"))?);
        writeln!(csv, "step,series,dataset,metric,value")?;
        let jsonl = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
        Ok(MetricsWriter { csv, jsonl })
    }

    pub fn record(
        &mut self,
        step: u64,
        series: &str,
        dataset: &str,
        metric: &str,
        value: f64,
    ) -> Result<()> {
        writeln!(self.csv, "{step},{series},{dataset},{metric},{value}")?;
        let row = serde_json::json!({
            "step": step,
            "series": series,
            "dataset": dataset,
            "metric": metric,
            "value": value,
        });
        writeln!(self.jsonl, "{row}")?;
        Ok(())
    }

    /// Flush both files; called after every logging burst so an aborted run
    /// still leaves a readable log.
    pub fn flush(&mut self) -> Result<()> {
        self.csv.flush()?;
        self.jsonl.flush()?;
        Ok(())
    }
}

// ---- learning curves ------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PositionStat {
    pub position: usize,
    pub accuracy: f64,
    pub ci95: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub stats: Vec<PositionStat>,
    /// sequences aggregated per position
    pub sequences: usize,
}

impl LearningCurve {
    pub fn seq_len(&self) -> usize {
        self.stats.len()
    }

    pub fn first_accuracy(&self) -> f64 {
        self.stats.first().map_or(0.0, |s| s.accuracy)
    }

    pub fn last_accuracy(&self) -> f64 {
        self.stats.last().map_or(0.0, |s| s.accuracy)
    }

    /// Improvement across the sequence, the quantity phases are read from.
    pub fn delta(&self) -> f64 {
        self.last_accuracy() - self.first_accuracy()
    }

    pub fn mean_loss(&self) -> f64 {
        let n = self.stats.len().max(1);
        self.stats.iter().map(|s| s.mean_loss).sum::<f64>() / n as f64
    }
}

pub fn ci95(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    CI95_Z * (p * (1.0 - p) / n as f64).sqrt()
}

/// Streams batches into per-position counts so curves can be aggregated
/// across arbitrarily many forward passes without holding logits.
pub struct CurveAccumulator {
    correct: Vec<u64>,
    loss_sum: Vec<f64>,
    sequences: usize,
}

impl CurveAccumulator {
    pub fn new(seq_len: usize) -> Self {
        CurveAccumulator {
            correct: vec![0; seq_len],
            loss_sum: vec![0.0; seq_len],
            sequences: 0,
        }
    }

    pub fn add_logits(&mut self, batch: &SequenceBatch, logits: &[f32]) -> Result<()> {
        let (b, t, c) = (batch.batch_size(), batch.seq_len(), batch.num_classes);
        if t != self.correct.len() || logits.len() != b * t * c {
            return Err(Error::Shape(format!(
                "accumulator of length {} got batch {b}x{t} with {} logits",
                self.correct.len(),
                logits.len()
            )));
        }
        for bi in 0..b {
            for j in 0..t {
                let row = &logits[(bi * t + j) * c..(bi * t + j + 1) * c];
                let target = batch.target(bi, j);
                self.correct[j] += (argmax(row) == target) as u64;
                let mx = row.iter().fold(f32::NEG_INFINITY, |a, &v| a.max(v)) as f64;
                let z: f64 = row.iter().map(|&v| (v as f64 - mx).exp()).sum();
                self.loss_sum[j] += z.ln() + mx - row[target] as f64;
            }
        }
        self.sequences += b;
        Ok(())
    }

    pub fn finish(self) -> Result<LearningCurve> {
        if self.sequences == 0 {
            return Err(Error::EmptyBatch("no sequences accumulated".into()));
        }
        let n = self.sequences;
        let stats = self
            .correct
            .iter()
            .zip(&self.loss_sum)
            .enumerate()
            .map(|(j, (&hits, &loss))| {
                let acc = hits as f64 / n as f64;
                PositionStat {
                    position: j,
                    accuracy: acc,
                    ci95: ci95(acc, n),
                    mean_loss: loss / n as f64,
                }
            })
            .collect();
        Ok(LearningCurve { stats, sequences: n })
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One forward pass, logits flattened [b * t * c]. Parameters are copied
/// into the graph, never written back.
pub fn forward_logits(
    cfg: &ModelConfig,
    store: &ParamStore<f32>,
    batch: &SequenceBatch,
) -> Result<Vec<f32>> {
    let mut g = Graph::new();
    let ids = g.load_store(store)?;
    let tok = g.constant(batch.tokens.clone());
    let out = forward(cfg, &mut g, &ids, tok)?;
    Ok(g.value(out).data().to_vec())
}

// ---- regimes and the main evaluation entry --------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    SeenTasks,
    UnseenTasks,
    UnseenDataset,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::SeenTasks => "seen_tasks",
            Regime::UnseenTasks => "unseen_tasks",
            Regime::UnseenDataset => "unseen_dataset",
        }
    }

    /// Task-stream seed for this regime, derived from the training seed.
    pub fn task_seed(&self, global_seed: u64) -> u64 {
        match self {
            Regime::SeenTasks => global_seed,
            Regime::UnseenTasks | Regime::UnseenDataset => global_seed ^ UNSEEN_TASK_SEED_FLIP,
        }
    }
}

/// Accuracy-versus-position curve of a frozen model over freshly sampled
/// task sequences.
#[allow(clippy::too_many_arguments)]
pub fn meta_test(
    cfg: &ModelConfig,
    store: &ParamStore<f32>,
    base: &BaseDataset,
    num_tasks: u64,
    dist: &PermutationDistribution,
    task_seed: u64,
    batches: usize,
    batch_size: usize,
    seq_len: usize,
    stream: &mut Stream,
) -> Result<LearningCurve> {
    let mut acc = CurveAccumulator::new(seq_len);
    for _ in 0..batches {
        let batch = sample_sequence_batch(
            base, num_tasks, dist, task_seed, batch_size, seq_len, stream, true,
        )?;
        let logits = forward_logits(cfg, store, &batch)?;
        acc.add_logits(&batch, &logits)?;
    }
    acc.finish()
}

// ---- phase classification -------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Memorization,
    TaskIdentification,
    GeneralLearning,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Memorization => "memorization",
            Phase::TaskIdentification => "task_identification",
            Phase::GeneralLearning => "general_learning",
        }
    }
}

/// Reads the algorithmic phase off two curve deltas: improvement on a
/// dataset never meta-trained on means a general learner; improvement only
/// on the training distribution means the model identifies which task it is
/// in; neither means it memorized.
pub fn phase_classify(seen_delta: f64, unseen_dataset_delta: f64) -> Phase {
    if unseen_dataset_delta >= PHASE_DELTA {
        Phase::GeneralLearning
    } else if seen_delta >= PHASE_DELTA {
        Phase::TaskIdentification
    } else {
        Phase::Memorization
    }
}

// ---- final-position comparisons -------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MethodScore {
    pub accuracy: f64,
    pub ci95: f64,
    pub trials: usize,
}

/// Final-position accuracy of any per-sequence predictor over fresh tasks:
/// `num_eval_tasks` task draws, `per_task` sequences each. The predictor
/// receives the raw projected sequence and must return one prediction per
/// position, each made before that position's label is revealed.
#[allow(clippy::too_many_arguments)]
pub fn final_position_score<F>(
    base: &BaseDataset,
    num_tasks: u64,
    dist: &PermutationDistribution,
    task_seed: u64,
    num_eval_tasks: usize,
    per_task: usize,
    seq_len: usize,
    stream: &mut Stream,
    mut predict: F,
) -> Result<MethodScore>
where
    F: FnMut(&Tensor<f32>, &[usize]) -> Result<Vec<usize>>,
{
    if num_eval_tasks == 0 || per_task == 0 || seq_len == 0 {
        return Err(Error::Config("degenerate comparison protocol".into()));
    }
    let mut hits = 0u64;
    let mut trials = 0usize;
    for _ in 0..num_eval_tasks {
        let k = stream.next_below(num_tasks);
        let spec = task_from_index(base, k, num_tasks, dist, task_seed)?;
        for _ in 0..per_task {
            let mut row = Stream::from_key(stream.next_u64());
            let (x, y) = raw_sequence(base, &spec, seq_len, &mut row, true)?;
            let preds = predict(&x, &y)?;
            if preds.len() != seq_len {
                return Err(Error::Shape(format!(
                    "predictor returned {} predictions for {seq_len} positions",
                    preds.len()
                )));
            }
            hits += (preds[seq_len - 1] == y[seq_len - 1]) as u64;
            trials += 1;
        }
    }
    let accuracy = hits as f64 / trials as f64;
    Ok(MethodScore { accuracy, ci95: ci95(accuracy, trials), trials })
}

/// Predictor adapter for meta-trained sequence models: tokenizes the raw
/// sequence and takes the argmax at every position.
pub fn predict_in_context(
    cfg: &ModelConfig,
    store: &ParamStore<f32>,
    x: &Tensor<f32>,
    y: &[usize],
    num_classes: usize,
) -> Result<Vec<usize>> {
    let tokens = tokenize_sequence(x, y, num_classes)?;
    let n_t = tokens.shape()[1];
    let mut g = Graph::new();
    let ids = g.load_store(store)?;
    let tok = g.constant(tokens);
    let out = forward(cfg, &mut g, &ids, tok)?;
    let logits = g.value(out).data();
    Ok((0..n_t).map(|j| argmax(&logits[j * num_classes..(j + 1) * num_classes])).collect())
}

// ---- cluster splitting for sweep outcomes ---------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Split1D {
    pub threshold: f64,
    pub lo_mean: f64,
    pub hi_mean: f64,
    pub lo_count: usize,
    pub hi_count: usize,
    /// within-cluster sum of squares over total sum of squares; small means
    /// two tight clusters explain the spread
    pub within_ratio: f64,
}

impl Split1D {
    /// Two clusters count as genuinely separate modes when they absorb at
    /// least 80% of the variance. A single gaussian split in half keeps
    /// about 36% within, a uniform 25%, so the margin is comfortable.
    pub fn is_bimodal(&self) -> bool {
        self.lo_count > 0 && self.hi_count > 0 && self.within_ratio < 0.2
    }
}

/// Two-means clustering of scalar outcomes, centers initialized at the
/// extremes. Assignment ties go to the low cluster.
pub fn two_means_split(values: &[f64]) -> Result<Split1D> {
    if values.len() < 2 {
        return Err(Error::Config(format!(
            "cluster split needs at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerics("non-finite value in cluster split".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let total_mean = values.iter().sum::<f64>() / values.len() as f64;
    let total_ss: f64 = values.iter().map(|&v| (v - total_mean).powi(2)).sum();
    if total_ss == 0.0 {
        return Ok(Split1D {
            threshold: lo,
            lo_mean: lo,
            hi_mean: lo,
            lo_count: values.len(),
            hi_count: 0,
            within_ratio: 1.0,
        });
    }

    let (mut c_lo, mut c_hi) = (lo, hi);
    for _ in 0..100 {
        let mid = (c_lo + c_hi) / 2.0;
        let (mut sum_lo, mut n_lo, mut sum_hi, mut n_hi) = (0.0, 0usize, 0.0, 0usize);
        for &v in values {
            if v <= mid {
                sum_lo += v;
                n_lo += 1;
            } else {
                sum_hi += v;
                n_hi += 1;
            }
        }
        let new_lo = if n_lo > 0 { sum_lo / n_lo as f64 } else { c_lo };
        let new_hi = if n_hi > 0 { sum_hi / n_hi as f64 } else { c_hi };
        if new_lo == c_lo && new_hi == c_hi {
            break;
        }
        c_lo = new_lo;
        c_hi = new_hi;
    }
    let threshold = (c_lo + c_hi) / 2.0;
    let (mut sum_lo, mut n_lo, mut sum_hi, mut n_hi) = (0.0, 0usize, 0.0, 0usize);
    for &v in values {
        if v <= threshold {
            sum_lo += v;
            n_lo += 1;
        } else {
            sum_hi += v;
            n_hi += 1;
        }
    }
    let lo_mean = if n_lo > 0 { sum_lo / n_lo as f64 } else { c_lo };
    let hi_mean = if n_hi > 0 { sum_hi / n_hi as f64 } else { c_hi };
    let within: f64 = values
        .iter()
        .map(|&v| {
            let c = if v <= threshold { lo_mean } else { hi_mean };
            (v - c).powi(2)
        })
        .sum();
    Ok(Split1D {
        threshold,
        lo_mean,
        hi_mean,
        lo_count: n_lo,
        hi_count: n_hi,
        within_ratio: within / total_ss,
    })
}

// ---- rank correlation -----------------------------------------------------

/// Spearman correlation with average ranks for ties.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Config(format!(
            "rank correlation needs two equally long series, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let rx = average_ranks(xs)?;
    let ry = average_ranks(ys)?;
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Config("rank correlation undefined for a constant series".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

fn average_ranks(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerics("non-finite value in rank correlation".into()));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    Ok(ranks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::random::make_random_dataset;
    use crate::models::{init_params, Family};
    use std::collections::BTreeMap;
    use std::io::Read as IoRead;

    #[test]
    fn metrics_files_hold_matching_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::create(dir.path()).unwrap();
        w.record(0, "train", "mnist", "loss", 2.302585).unwrap();
        w.record(100, "eval", "fashion_mnist", "accuracy", 0.5).unwrap();
        w.flush().unwrap();

        let mut csv = String::new();
        File::open(dir.path().join("metrics.csv"))
            .unwrap()
            .read_to_string(&mut csv)
            .unwrap();
        assert_eq!(
            csv,
            "step,series,dataset,metric,value\n\
             0,train,mnist,loss,2.302585\n\
             100,eval,fashion_mnist,accuracy,0.5\n"
        );

        let mut jsonl = String::new();
        File::open(dir.path().join("metrics.jsonl"))
            .unwrap()
            .read_to_string(&mut jsonl)
            .unwrap();
        let rows: Vec<serde_json::Value> =
            jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1]["metric"], "accuracy");
        assert_eq!(rows[1]["value"], 0.5);
        assert_eq!(rows[0]["step"], 0);
    }

    fn desk_transformer(n_x: usize, t: usize) -> ModelConfig {
        let mut cfg = ModelConfig::desk(n_x + 10, 10, t);
        cfg.family = Family::Transformer;
        cfg
    }

    #[test]
    fn batched_curve_equals_mean_of_per_sequence_curves() {
        let base = make_random_dataset(3, 12, 6, 10).unwrap();
        let cfg = desk_transformer(6, 5);
        let store = init_params::<f32>(&cfg, 1).unwrap();
        let dist = PermutationDistribution::uniform(10);
        let mut stream = Stream::new(9, "eval", 0);
        let batch = sample_sequence_batch(&base, 16, &dist, 5, 4, 5, &mut stream, true).unwrap();

        let mut whole = CurveAccumulator::new(5);
        let logits = forward_logits(&cfg, &store, &batch).unwrap();
        whole.add_logits(&batch, &logits).unwrap();
        let whole = whole.finish().unwrap();

        let mut parts = CurveAccumulator::new(5);
        let width = batch.token_dim();
        for bi in 0..4 {
            let row = SequenceBatch {
                tokens: Tensor::new(
                    vec![1, 5, width],
                    batch.tokens.data()[bi * 5 * width..(bi + 1) * 5 * width].to_vec(),
                )
                .unwrap(),
                targets: batch.targets[bi * 5..(bi + 1) * 5].to_vec(),
                task_ids: vec![batch.task_ids[bi]],
                num_classes: 10,
            };
            let logits = forward_logits(&cfg, &store, &row).unwrap();
            parts.add_logits(&row, &logits).unwrap();
        }
        let parts = parts.finish().unwrap();
        for (a, b) in whole.stats.iter().zip(&parts.stats) {
            assert_eq!(a.accuracy, b.accuracy);
            assert!((a.mean_loss - b.mean_loss).abs() < 1e-9);
        }
    }

    #[test]
    fn untrained_first_position_accuracy_is_chance() {
        let base = make_random_dataset(7, 40, 8, 10).unwrap();
        let cfg = desk_transformer(8, 10);
        let store = init_params::<f32>(&cfg, 3).unwrap();
        let dist = PermutationDistribution::uniform(10);
        let mut stream = Stream::new(11, "eval", 0);
        let curve =
            meta_test(&cfg, &store, &base, 1 << 20, &dist, 0, 8, 32, 10, &mut stream).unwrap();
        assert_eq!(curve.sequences, 256);
        // uniform label permutations make any untrained prediction a 1-in-10
        // guess; 3 sigma around 0.1 for 256 draws
        let sigma = (0.1f64 * 0.9 / 256.0).sqrt();
        assert!(
            (curve.first_accuracy() - 0.1).abs() < 3.0 * sigma,
            "first-position accuracy {}",
            curve.first_accuracy()
        );
    }

    #[test]
    fn meta_test_never_mutates_parameters() {
        let base = make_random_dataset(1, 20, 5, 10).unwrap();
        let cfg = desk_transformer(5, 6);
        let store = init_params::<f32>(&cfg, 2).unwrap();
        let before: BTreeMap<String, Vec<u32>> = store
            .iter()
            .map(|(n, t)| (n.clone(), t.data().iter().map(|v| v.to_bits()).collect()))
            .collect();
        let dist = PermutationDistribution::uniform(10);
        let mut stream = Stream::new(4, "eval", 0);
        meta_test(&cfg, &store, &base, 64, &dist, 9, 2, 3, 6, &mut stream).unwrap();
        for (name, t) in store.iter() {
            let bits: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(&bits, &before[name], "{name} changed");
        }
    }

    #[test]
    fn phase_boundaries() {
        assert_eq!(phase_classify(0.0, 0.0), Phase::Memorization);
        assert_eq!(phase_classify(0.04, 0.04), Phase::Memorization);
        assert_eq!(phase_classify(0.2, 0.01), Phase::TaskIdentification);
        assert_eq!(phase_classify(0.05, 0.0), Phase::TaskIdentification);
        assert_eq!(phase_classify(0.3, 0.3), Phase::GeneralLearning);
        assert_eq!(phase_classify(0.0, 0.05), Phase::GeneralLearning);
    }

    #[test]
    fn split_finds_hand_built_clusters() {
        let s = two_means_split(&[0.0, 0.1, 5.0, 5.1]).unwrap();
        assert_eq!((s.lo_count, s.hi_count), (2, 2));
        assert!((s.lo_mean - 0.05).abs() < 1e-12);
        assert!((s.hi_mean - 5.05).abs() < 1e-12);
        assert!(s.threshold > 0.1 && s.threshold < 5.0);
        assert!(s.is_bimodal());
    }

    /// Exact 1-D two-means is a contiguous split of the sorted values; the
    /// iterative version must land on the same partition for separated data.
    #[test]
    fn split_matches_exhaustive_oracle_on_separated_draws() {
        for seed in 0..20u64 {
            let mut s = Stream::new(seed, "clusters", 0);
            let n = 6 + (seed as usize % 15);
            let values: Vec<f64> = (0..n)
                .map(|i| {
                    let center = if i % 3 == 0 { 8.0 } else { 1.0 };
                    center + 0.3 * s.next_gaussian()
                })
                .collect();

            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut best = (f64::INFINITY, 0usize);
            for cut in 1..n {
                let (a, b) = sorted.split_at(cut);
                let am = a.iter().sum::<f64>() / a.len() as f64;
                let bm = b.iter().sum::<f64>() / b.len() as f64;
                let sse: f64 = a.iter().map(|v| (v - am).powi(2)).sum::<f64>()
                    + b.iter().map(|v| (v - bm).powi(2)).sum::<f64>();
                if sse < best.0 {
                    best = (sse, cut);
                }
            }
            let oracle_threshold = (sorted[best.1 - 1] + sorted[best.1]) / 2.0;

            let split = two_means_split(&values).unwrap();
            let ours: Vec<bool> = values.iter().map(|&v| v > split.threshold).collect();
            let oracle: Vec<bool> = values.iter().map(|&v| v > oracle_threshold).collect();
            assert_eq!(ours, oracle, "seed {seed}");
            assert!(split.is_bimodal());
        }
    }

    #[test]
    fn unimodal_and_degenerate_samples_are_not_bimodal() {
        let mut s = Stream::new(5, "noise", 0);
        let gauss: Vec<f64> = (0..40).map(|_| s.next_gaussian()).collect();
        let split = two_means_split(&gauss).unwrap();
        assert!(!split.is_bimodal(), "within ratio {}", split.within_ratio);

        let flat = two_means_split(&[0.7, 0.7, 0.7]).unwrap();
        assert!(!flat.is_bimodal());
        assert_eq!(flat.hi_count, 0);

        assert!(two_means_split(&[1.0]).is_err());
    }

    #[test]
    fn spearman_hand_cases() {
        let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        let rho = spearman_rho(&[1.0, 2.0, 3.0], &[5.0, 0.0, -5.0]).unwrap();
        assert!((rho + 1.0).abs() < 1e-12);
        // ranks x: [1, 2.5, 2.5, 4], y monotone: hand Pearson on ranks
        let rho = spearman_rho(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let expected = 0.9486832980505138; // 3/sqrt(10) via direct arithmetic
        assert!((rho - expected).abs() < 1e-12);
        assert!(spearman_rho(&[1.0, 1.0], &[2.0, 3.0]).is_err());
        assert!(spearman_rho(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn final_position_protocol_scores_known_predictors() {
        let base = make_random_dataset(2, 30, 6, 10).unwrap();
        let dist = PermutationDistribution::uniform(10);
        let mut stream = Stream::new(8, "table", 0);
        let cheat = final_position_score(
            &base, 256, &dist, 3, 16, 16, 5, &mut stream,
            |_x, y| Ok(y.to_vec()),
        )
        .unwrap();
        assert_eq!(cheat.accuracy, 1.0);
        assert_eq!(cheat.trials, 256);

        let mut stream = Stream::new(9, "table", 0);
        let constant = final_position_score(
            &base, 256, &dist, 3, 16, 16, 5, &mut stream,
            |x, _y| Ok(vec![0; x.shape()[0]]),
        )
        .unwrap();
        let sigma = (0.1f64 * 0.9 / 256.0).sqrt();
        assert!(
            (constant.accuracy - 0.1).abs() < 3.0 * sigma,
            "constant predictor scored {}",
            constant.accuracy
        );
    }

    #[test]
    fn in_context_adapter_returns_one_prediction_per_position() {
        let base = make_random_dataset(4, 15, 5, 10).unwrap();
        let cfg = desk_transformer(5, 7);
        let store = init_params::<f32>(&cfg, 6).unwrap();
        let dist = PermutationDistribution::uniform(10);
        let spec = task_from_index(&base, 0, 4, &dist, 0).unwrap();
        let mut stream = Stream::new(1, "row", 0);
        let (x, y) = raw_sequence(&base, &spec, 7, &mut stream, true).unwrap();
        let preds = predict_in_context(&cfg, &store, &x, &y, 10).unwrap();
        assert_eq!(preds.len(), 7);
        assert!(preds.iter().all(|&p| p < 10));
    }
}
