//! Grokking probe: meta-train in the memorization regime across weight
//! decay coefficients, keep evaluating unseen-task loss long after the
//! train loss converges, and report whether a delayed test-loss drop (the
//! grokking signature) ever appears.

use std::path::{Path, PathBuf};

use gpicl::error::{Error, Result};

use crate::config::RunConfig;
use crate::experiment::run_to_dir;

/// Train loss below this counts as converged.
pub const TRAIN_CONVERGED: f64 = 0.1;
/// Test-loss fall (from its running maximum) after convergence that counts
/// as the signature.
pub const SIGNATURE_DROP: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct GrokSpec {
    pub base: RunConfig,
    pub weight_decays: Vec<f64>,
}

impl GrokSpec {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut base_lines = String::new();
        let mut weight_decays = vec![0.0, 0.01, 0.1, 1.0];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            if key.trim() == "weight_decays" {
                weight_decays = value
                    .split(',')
                    .map(|v| {
                        v.trim().parse().map_err(|_| {
                            Error::Config(format!("weight_decays: cannot parse {v:?}"))
                        })
                    })
                    .collect::<Result<_>>()?;
                if weight_decays.is_empty() {
                    return Err(Error::Config("weight_decays is empty".into()));
                }
            } else {
                base_lines.push_str(line);
                base_lines.push('\n');
            }
        }
        Ok(GrokSpec { base: RunConfig::parse_str(&base_lines)?, weight_decays })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GrokPoint {
    pub step: u64,
    pub train_loss: f64,
    pub test_loss: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct GrokReading {
    /// first tracked step with train loss below the threshold
    pub converged_step: Option<u64>,
    pub signature: bool,
    /// largest fall of test loss from its post-convergence running maximum
    pub max_drop: f64,
}

/// The signature per the definition above: after the train loss first goes
/// below `TRAIN_CONVERGED`, the test loss falls at least `SIGNATURE_DROP`
/// nats below its running maximum.
pub fn detect_signature(points: &[GrokPoint]) -> GrokReading {
    let Some(i) = points.iter().position(|p| p.train_loss < TRAIN_CONVERGED) else {
        return GrokReading { converged_step: None, signature: false, max_drop: 0.0 };
    };
    let mut running_max = f64::NEG_INFINITY;
    let mut max_drop: f64 = 0.0;
    for p in &points[i..] {
        running_max = running_max.max(p.test_loss);
        max_drop = max_drop.max(running_max - p.test_loss);
    }
    GrokReading {
        converged_step: Some(points[i].step),
        signature: max_drop >= SIGNATURE_DROP,
        max_drop,
    }
}

/// (step, train loss, unseen-task loss) at every evaluation step of a
/// finished run, read back from its metrics.csv. Train loss is the logged
/// value at the last step at or before the evaluation.
pub fn read_grok_points(dir: &Path, train_dataset: &str) -> Result<Vec<GrokPoint>> {
    let text = std::fs::read_to_string(dir.join("metrics.csv"))?;
    let mut train: Vec<(u64, f64)> = Vec::new();
    let mut test: Vec<(u64, f64)> = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            continue;
        }
        let step: u64 = fields[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad step in metrics.csv: {line:?}")))?;
        let value: f64 = fields[4]
            .parse()
            .map_err(|_| Error::Format(format!("bad value in metrics.csv: {line:?}")))?;
        match (fields[1], fields[2], fields[3]) {
            ("train", _, "loss") => train.push((step, value)),
            ("unseen_tasks", d, "mean_loss") if d == train_dataset => test.push((step, value)),
            _ => {}
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Format(format!(
            "{}: metrics.csv has no train/unseen_tasks series",
            dir.display()
        )));
    }
    let mut points = Vec::with_capacity(test.len());
    for (step, test_loss) in test {
        let train_loss = train
            .iter()
            .take_while(|(s, _)| *s <= step)
            .last()
            .map(|&(_, l)| l)
            .unwrap_or(f64::INFINITY);
        points.push(GrokPoint { step, train_loss, test_loss });
    }
    Ok(points)
}

pub struct GrokRunReport {
    pub weight_decay: f64,
    pub reading: GrokReading,
    pub final_train: f64,
    pub final_test: f64,
}

pub struct GrokProbeReport {
    pub runs: Vec<GrokRunReport>,
    pub ran: usize,
    pub skipped: usize,
    pub csv: PathBuf,
}

fn wd_dir_name(wd: f64) -> String {
    format!("wd-{wd}")
}

pub fn run_grok_probe(spec: &GrokSpec, out_dir: &Path) -> Result<GrokProbeReport> {
    std::fs::create_dir_all(out_dir)?;
    let mut runs = Vec::new();
    let mut ran = 0;
    let mut skipped = 0;
    let mut curves = String::from("weight_decay,step,train_loss,test_loss\n");
    for &wd in &spec.weight_decays {
        let mut cfg = spec.base.clone();
        cfg.weight_decay = wd;
        let dir = out_dir.join(wd_dir_name(wd));
        let done = dir.join("summary.json").exists()
            && std::fs::read_to_string(dir.join("config.txt"))
                .map(|t| t == cfg.canonical_text())
                .unwrap_or(false);
        if done {
            skipped += 1;
        } else {
            let _ = std::fs::remove_dir_all(&dir);
            run_to_dir(&cfg, &dir)?;
            ran += 1;
        }
        let points = read_grok_points(&dir, &cfg.dataset)?;
        let reading = detect_signature(&points);
        for p in &points {
            curves.push_str(&format!("{wd},{},{},{}\n", p.step, p.train_loss, p.test_loss));
        }
        let last = points.last().expect("read_grok_points rejects empty");
        runs.push(GrokRunReport {
            weight_decay: wd,
            reading,
            final_train: last.train_loss,
            final_test: last.test_loss,
        });
    }
    let csv = out_dir.join("grok-curves.csv");
    std::fs::write(&csv, curves)?;

    let entries: Vec<serde_json::Value> = runs
        .iter()
        .map(|r| {
            serde_json::json!({
                "weight_decay": r.weight_decay,
                "converged_step": r.reading.converged_step,
                "signature": r.reading.signature,
                "max_drop": r.reading.max_drop,
                "final_train_loss": r.final_train,
                "final_test_loss": r.final_test,
            })
        })
        .collect();
    std::fs::write(
        out_dir.join("grok.json"),
        format!("{:#}\n", serde_json::json!({ "runs": entries })),
    )?;
    Ok(GrokProbeReport { runs, ran, skipped, csv })
}
