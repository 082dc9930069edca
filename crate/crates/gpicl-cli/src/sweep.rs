//! Grid sweeps over run configs: cells are the Cartesian product of the
//! axes, each cell runs `repeats` seeds, and finished cells are recognized
//! by canonical-config equality so resumption costs zero training steps.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use gpicl::error::{Error, Result};
use gpicl::eval::Phase;

use crate::config::RunConfig;
use crate::experiment::run_to_dir;

pub const DEFAULT_BUDGET: usize = 256;

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub base: RunConfig,
    /// (config key, values), sorted by key; cell order is row-major over
    /// this list with the last axis fastest
    pub axes: Vec<(String, Vec<String>)>,
    pub repeats: u64,
    /// refusal threshold on cells x repeats
    pub budget: usize,
    pub workers: usize,
}

impl SweepSpec {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut base_lines = String::new();
        let mut axes: Vec<(String, Vec<String>)> = Vec::new();
        let mut repeats = 1u64;
        let mut budget = DEFAULT_BUDGET;
        let mut workers = 1usize;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(axis_key) = key.strip_prefix("axis.") {
                let values: Vec<String> =
                    value.split(',').map(|v| v.trim().to_string()).collect();
                if values.len() < 2 {
                    return Err(Error::Config(format!(
                        "axis.{axis_key} needs at least 2 values, got {value:?}"
                    )));
                }
                if axes.iter().any(|(k, _)| k == axis_key) {
                    return Err(Error::Config(format!("axis.{axis_key} given twice")));
                }
                axes.push((axis_key.to_string(), values));
            } else {
                match key {
                    "repeats" => {
                        repeats = value.parse().map_err(|_| {
                            Error::Config(format!("repeats: cannot parse {value:?}"))
                        })?
                    }
                    "budget" => {
                        budget = value.parse().map_err(|_| {
                            Error::Config(format!("budget: cannot parse {value:?}"))
                        })?
                    }
                    "workers" => {
                        workers = value.parse().map_err(|_| {
                            Error::Config(format!("workers: cannot parse {value:?}"))
                        })?
                    }
                    _ => {
                        base_lines.push_str(line);
                        base_lines.push('\n');
                    }
                }
            }
        }
        let base = RunConfig::parse_str(&base_lines)?;
        if repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if axes.is_empty() {
            return Err(Error::Config("a sweep needs at least one axis.<key> line".into()));
        }
        axes.sort_by(|a, b| a.0.cmp(&b.0));
        // Reject unknown axis keys and unparsable values up front, before
        // any cell starts training.
        let mut scratch = base.clone();
        for (key, values) in &axes {
            for v in values {
                scratch.apply(key, v)?;
            }
        }
        Ok(SweepSpec { base, axes, repeats, budget, workers })
    }

    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|(_, vs)| vs.len()).product()
    }

    /// Axis assignments of one cell, row-major with the last axis fastest.
    pub fn cell(&self, index: usize) -> Vec<(&str, &str)> {
        let mut rem = index;
        let mut out = vec![("", ""); self.axes.len()];
        for (i, (key, values)) in self.axes.iter().enumerate().rev() {
            out[i] = (key.as_str(), values[rem % values.len()].as_str());
            rem /= values.len();
        }
        out
    }

    pub fn cell_config(&self, index: usize, repeat: u64) -> Result<RunConfig> {
        let mut cfg = self.base.clone();
        for (key, value) in self.cell(index) {
            cfg.apply(key, value)?;
        }
        cfg.global_seed = self.base.global_seed + repeat;
        cfg.init_seed = self.base.init_seed + repeat;
        Ok(cfg)
    }
}

pub fn content_hash(text: &str) -> String {
    // FNV-1a; collisions among a sweep's handful of cells are not a concern
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{h:016x}")
}

struct Job {
    cell: usize,
    repeat: u64,
    cfg: RunConfig,
    dir: PathBuf,
}

fn job_done(job: &Job) -> bool {
    job.dir.join("summary.json").exists()
        && std::fs::read_to_string(job.dir.join("config.txt"))
            .map(|t| t == job.cfg.canonical_text())
            .unwrap_or(false)
}

#[derive(Debug)]
pub struct SweepReport {
    pub csv: PathBuf,
    pub ran: usize,
    pub skipped: usize,
    pub failed: usize,
}

pub fn run_sweep(spec: &SweepSpec, out_dir: &Path) -> Result<SweepReport> {
    let total = spec.cell_count() * spec.repeats as usize;
    if total > spec.budget {
        return Err(Error::Config(format!(
            "sweep would launch {total} runs ({} cells x {} repeats) over the budget of {}; raise budget= if intended",
            spec.cell_count(),
            spec.repeats,
            spec.budget
        )));
    }
    let mut jobs = Vec::with_capacity(total);
    for cell in 0..spec.cell_count() {
        for repeat in 0..spec.repeats {
            let cfg = spec.cell_config(cell, repeat)?;
            let dir = out_dir.join("cells").join(content_hash(&cfg.canonical_text()));
            jobs.push(Job { cell, repeat, cfg, dir });
        }
    }
    for (i, a) in jobs.iter().enumerate() {
        if jobs[..i].iter().any(|b| b.dir == a.dir) {
            return Err(Error::Config(format!(
                "cell {} repeat {} duplicates an earlier cell's config; drop the redundant axis value",
                a.cell, a.repeat
            )));
        }
    }
    std::fs::create_dir_all(out_dir.join("cells"))?;

    let ran = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(job) = jobs.get(i) else { break };
        if job_done(job) {
            skipped.fetch_add(1, Ordering::SeqCst);
            continue;
        }
        // A half-written cell from an interrupted sweep restarts cleanly.
        let _ = std::fs::remove_dir_all(&job.dir);
        match run_to_dir(&job.cfg, &job.dir) {
            Ok(_) => {
                ran.fetch_add(1, Ordering::SeqCst);
            }
            Err(e) => {
                failed.fetch_add(1, Ordering::SeqCst);
                let _ = std::fs::create_dir_all(&job.dir);
                let _ = std::fs::write(job.dir.join("error.txt"), format!("{e}\n"));
            }
        }
    };
    if spec.workers <= 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..spec.workers.min(jobs.len()) {
                s.spawn(worker);
            }
        });
    }

    let csv = out_dir.join("sweep.csv");
    write_aggregate(&csv, spec, &jobs)?;
    Ok(SweepReport {
        csv,
        ran: ran.into_inner(),
        skipped: skipped.into_inner(),
        failed: failed.into_inner(),
    })
}

/// Three-outcome label for a finished cell, plateau detection first: a run
/// whose loss EMA never durably left chance level is trapped regardless of
/// its curves.
pub fn outcome_label(plateau: Option<u64>, phase: Phase) -> &'static str {
    match (plateau, phase) {
        (None, _) => "plateau",
        (Some(_), Phase::GeneralLearning) => "generalized",
        (Some(_), _) => "memorized",
    }
}

struct CellResult {
    label: String,
    plateau: String,
    seen_delta: String,
    unseen_task_delta: String,
    unseen_dataset_delta: String,
    acc_last_seen: String,
    final_train_loss: String,
}

fn read_summary(job: &Job) -> Result<CellResult> {
    let text = std::fs::read_to_string(job.dir.join("summary.json"))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", job.dir.display())))?;
    let phase = match v["phase"].as_str() {
        Some("general_learning") => Phase::GeneralLearning,
        Some("task_identification") => Phase::TaskIdentification,
        _ => Phase::Memorization,
    };
    let plateau = v["plateau"].as_u64();
    let curve = |series: &str, dataset: &str, field: &str| -> String {
        v["curves"]
            .as_array()
            .and_then(|cs| {
                cs.iter().find(|c| {
                    c["series"].as_str() == Some(series) && c["dataset"].as_str() == Some(dataset)
                })
            })
            .and_then(|c| c[field].as_f64())
            .map_or(String::new(), |x| x.to_string())
    };
    let seen_ds = &job.cfg.dataset;
    let unseen_ds = job.cfg.eval_datasets.first().cloned().unwrap_or_default();
    Ok(CellResult {
        label: outcome_label(plateau, phase).to_string(),
        plateau: plateau.map_or(String::new(), |p| p.to_string()),
        seen_delta: curve("seen_tasks", seen_ds, "delta"),
        unseen_task_delta: curve("unseen_tasks", seen_ds, "delta"),
        unseen_dataset_delta: curve("unseen_dataset", &unseen_ds, "delta"),
        acc_last_seen: curve("seen_tasks", seen_ds, "acc_last"),
        final_train_loss: v["final_train_loss"]
            .as_f64()
            .map_or(String::new(), |x| x.to_string()),
    })
}

fn write_aggregate(path: &Path, spec: &SweepSpec, jobs: &[Job]) -> Result<()> {
    let mut text = String::from("cell,repeat");
    for (key, _) in &spec.axes {
        text.push(',');
        text.push_str(key);
    }
    text.push_str(
        ",status,label,plateau,seen_delta,unseen_task_delta,unseen_dataset_delta,acc_last_seen,final_train_loss\n",
    );
    for job in jobs {
        text.push_str(&format!("{},{}", job.cell, job.repeat));
        for (_, value) in spec.cell(job.cell) {
            text.push(',');
            text.push_str(value);
        }
        match read_summary(job) {
            Ok(r) => text.push_str(&format!(
                ",ok,{},{},{},{},{},{},{}\n",
                r.label,
                r.plateau,
                r.seen_delta,
                r.unseen_task_delta,
                r.unseen_dataset_delta,
                r.acc_last_seen,
                r.final_train_loss
            )),
            Err(_) => text.push_str(",failed,,,,,,,\n"),
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}
