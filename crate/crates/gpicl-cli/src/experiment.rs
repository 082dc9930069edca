//! Single-run orchestration: config in, run directory out, plus checkpoint
//! evaluation for `meta-test`.

use std::path::{Path, PathBuf};

use gpicl::checkpoint;
use gpicl::data::{BaseDataset, NUM_CLASSES};
use gpicl::error::{Error, Result};
use gpicl::eval::{phase_classify, LearningCurve, Phase, Regime};
use gpicl::meta::{meta_train, plateau_length, EvalSuite, RunArtifacts, UNSEEN_EVAL_TASKS};
use gpicl::rng::Stream;
use gpicl::store::ParamStore;
use gpicl::tasks::PermutationDistribution;

use crate::config::RunConfig;
use crate::datasets::{self, load_eval, load_pair};

pub struct RunOutcome {
    pub dir: PathBuf,
    pub artifacts: RunArtifacts,
    pub phase: Phase,
    /// escape step of the meta-loss plateau; None means trapped for the
    /// whole run
    pub plateau: Option<u64>,
}

impl RunOutcome {
    pub fn curve(&self, series: &str, dataset: &str) -> Option<&LearningCurve> {
        self.artifacts
            .final_curves
            .iter()
            .find(|(s, d, _)| s == series && d == dataset)
            .map(|(_, _, c)| c)
    }
}

/// Phase of a finished run, read from its final evaluation curves. The
/// unseen-dataset delta comes from the first eval dataset listed.
fn phase_of(cfg: &RunConfig, artifacts: &RunArtifacts) -> Phase {
    let find = |series: &str, dataset: &str| -> f64 {
        artifacts
            .final_curves
            .iter()
            .find(|(s, d, _)| s == series && d == dataset)
            .map_or(0.0, |(_, _, c)| c.delta())
    };
    let seen = find(Regime::SeenTasks.as_str(), &cfg.dataset);
    let unseen_dataset = cfg
        .eval_datasets
        .first()
        .map_or(0.0, |name| find(Regime::UnseenDataset.as_str(), name));
    phase_classify(seen, unseen_dataset)
}

fn summary_json(cfg: &RunConfig, outcome: &RunOutcome, wall_seconds: f64) -> serde_json::Value {
    let curves: Vec<serde_json::Value> = outcome
        .artifacts
        .final_curves
        .iter()
        .map(|(series, dataset, c)| {
            serde_json::json!({
                "series": series,
                "dataset": dataset,
                "acc_first": c.first_accuracy(),
                "acc_last": c.last_accuracy(),
                "delta": c.delta(),
                "mean_loss": c.mean_loss(),
                "sequences": c.sequences,
            })
        })
        .collect();
    let final_loss = outcome.artifacts.history.last().map(|&(_, l)| l);
    serde_json::json!({
        "phase": outcome.phase.as_str(),
        "plateau": outcome.plateau,
        "steps": cfg.steps,
        "final_train_loss": final_loss,
        "curves": curves,
        "wall_seconds": wall_seconds,
    })
}

/// Meta-train `cfg` into `dir` (created; must not already contain a run).
/// Leaves behind config.txt (canonical echo), metrics.csv/.jsonl,
/// checkpoints, and summary.json.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    if dir.join("summary.json").exists() {
        return Err(Error::Config(format!(
            "{} already holds a finished run",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    let root = datasets::data_root(cfg.data_dir.as_deref());
    let data = load_pair(&cfg.dataset, &root, cfg.downscale)?;
    let evals: Vec<BaseDataset> = cfg
        .eval_datasets
        .iter()
        .map(|name| load_eval(name, &root, cfg.downscale, data.train.n_x()))
        .collect::<Result<_>>()?;
    let model_cfg = cfg.model_config(data.train.n_x());
    let train_cfg = cfg.train_config();
    let dist = cfg.distribution()?;
    let suite = EvalSuite {
        seen: &data.test,
        unseen: evals.iter().collect(),
    };

    let t0 = std::time::Instant::now();
    let artifacts = meta_train(&model_cfg, &train_cfg, &data.train, &suite, &dist, dir)?;
    let wall = t0.elapsed().as_secs_f64();

    // Overwrite the engine's config echo with the full canonical one; the
    // engine only knows the keys it was handed.
    std::fs::write(dir.join("config.txt"), cfg.canonical_text())?;
    let plateau = plateau_length(&artifacts.history, NUM_CLASSES);
    let mut outcome = RunOutcome {
        dir: dir.to_path_buf(),
        artifacts,
        phase: Phase::Memorization,
        plateau,
    };
    outcome.phase = phase_of(cfg, &outcome.artifacts);
    let summary = summary_json(cfg, &outcome, wall);
    std::fs::write(dir.join("summary.json"), format!("{:#}\n", summary))?;
    Ok(outcome)
}

/// `meta-train <cfg>`: the run directory is `<out_dir>/<run_name>`, where
/// `run_name` defaults to the config file's stem.
pub fn run_experiment(cfg_path: &Path, out_override: Option<&Path>) -> Result<RunOutcome> {
    let cfg = RunConfig::parse_file(cfg_path)?;
    let dir = match out_override {
        Some(d) => d.to_path_buf(),
        None => {
            let name = match &cfg.run_name {
                Some(n) => n.clone(),
                None => cfg_path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| {
                        Error::Config(format!("cannot derive a run name from {}", cfg_path.display()))
                    })?
                    .to_string(),
            };
            PathBuf::from(&cfg.out_dir).join(name)
        }
    };
    run_to_dir(&cfg, &dir)
}

pub fn parse_regime(s: &str) -> Result<Regime> {
    match s {
        "seen_tasks" => Ok(Regime::SeenTasks),
        "unseen_tasks" => Ok(Regime::UnseenTasks),
        "unseen_dataset" => Ok(Regime::UnseenDataset),
        other => Err(Error::Config(format!(
            "unknown regime {other:?} (seen_tasks, unseen_tasks, unseen_dataset)"
        ))),
    }
}

/// Frozen-checkpoint evaluation. The run config is read from the
/// config.txt sitting next to the checkpoint, so the model is rebuilt
/// exactly as trained.
pub struct MetaTestArgs<'a> {
    pub ckpt: &'a Path,
    pub dataset: &'a str,
    pub regime: Regime,
    pub batches: usize,
    pub batch_size: usize,
    pub out: Option<&'a Path>,
}

pub fn meta_test_cmd(args: &MetaTestArgs) -> Result<PathBuf> {
    let run_dir = args.ckpt.parent().ok_or_else(|| {
        Error::Config(format!("checkpoint {} has no parent directory", args.ckpt.display()))
    })?;
    let cfg = RunConfig::parse_file(&run_dir.join("config.txt"))?;
    let store: ParamStore<f32> = checkpoint::load(args.ckpt)?;

    let root = datasets::data_root(cfg.data_dir.as_deref());
    // Width must match training; recover it from the training corpus.
    let n_x = load_pair(&cfg.dataset, &root, cfg.downscale)?.train.n_x();
    let base = load_eval(args.dataset, &root, cfg.downscale, n_x)?;
    let model_cfg = cfg.model_config(n_x);

    let (num_tasks, dist) = match args.regime {
        Regime::SeenTasks => (cfg.num_tasks, cfg.distribution()?),
        Regime::UnseenTasks | Regime::UnseenDataset => {
            (UNSEEN_EVAL_TASKS, PermutationDistribution::uniform(NUM_CLASSES))
        }
    };
    let task_seed = args.regime.task_seed(cfg.global_seed);
    let mut stream = Stream::new(
        cfg.global_seed,
        &format!("meta-test/{}/{}", args.regime.as_str(), base.name),
        0,
    );
    let curve = gpicl::eval::meta_test(
        &model_cfg,
        &store,
        &base,
        num_tasks,
        &dist,
        task_seed,
        args.batches,
        args.batch_size,
        cfg.seq_len,
        &mut stream,
    )?;

    let out_dir = match args.out {
        Some(d) => d.to_path_buf(),
        None => run_dir.join(format!("meta-test-{}-{}", base.name, args.regime.as_str())),
    };
    std::fs::create_dir_all(&out_dir)?;
    write_curve_csv(&out_dir.join("eval.csv"), cfg.family.as_str(), &base.name, args.regime, &curve)?;
    let summary = serde_json::json!({
        "method": cfg.family.as_str(),
        "dataset": base.name,
        "regime": args.regime.as_str(),
        "acc_first": curve.first_accuracy(),
        "acc_last": curve.last_accuracy(),
        "delta": curve.delta(),
        "mean_loss": curve.mean_loss(),
        "sequences": curve.sequences,
    });
    std::fs::write(out_dir.join("summary.json"), format!("{:#}\n", summary))?;
    Ok(out_dir)
}

pub fn write_curve_csv(
    path: &Path,
    method: &str,
    dataset: &str,
    regime: Regime,
    curve: &LearningCurve,
) -> Result<()> {
    let mut text = String::from("method,dataset,regime,position,acc,ci95\n");
    for stat in &curve.stats {
        text.push_str(&format!(
            "{method},{dataset},{},{},{},{}\n",
            regime.as_str(),
            stat.position,
            stat.accuracy,
            stat.ci95
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}
