//! State-size study: meta-train a set of architectures, then rank-correlate
//! their in-context improvement on unseen tasks against state size and
//! against parameter count.

use std::path::{Path, PathBuf};

use gpicl::error::{Error, Result};
use gpicl::eval::spearman_rho;
use gpicl::models::state_report;

use crate::config::RunConfig;
use crate::experiment::run_to_dir;
use crate::plot::{render, PlotSpec};
use crate::sweep::content_hash;

pub const MIN_RUNS: usize = 6;
pub const MIN_FAMILIES: usize = 2;

#[derive(Clone, Debug)]
pub struct StudySpec {
    pub base: RunConfig,
    /// (run name, config overrides as (key, value) pairs)
    pub runs: Vec<(String, Vec<(String, String)>)>,
}

impl StudySpec {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Base config lines plus one `run.<name>=key=value,key=value` line per
    /// architecture.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut base_lines = String::new();
        let mut runs: Vec<(String, Vec<(String, String)>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(name) = key.strip_prefix("run.") {
                if runs.iter().any(|(n, _)| n == name) {
                    return Err(Error::Config(format!("run.{name} given twice")));
                }
                let mut overrides = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    let (k, v) = part.split_once('=').ok_or_else(|| {
                        Error::Config(format!(
                            "run.{name}: override {part:?} is not key=value"
                        ))
                    })?;
                    overrides.push((k.trim().to_string(), v.trim().to_string()));
                }
                runs.push((name.to_string(), overrides));
            } else {
                base_lines.push_str(line);
                base_lines.push('\n');
            }
        }
        let base = RunConfig::parse_str(&base_lines)?;
        let spec = StudySpec { base, runs };
        spec.validate()?;
        Ok(spec)
    }

    pub fn run_config(&self, index: usize) -> Result<RunConfig> {
        let (_, overrides) = &self.runs[index];
        let mut cfg = self.base.clone();
        for (k, v) in overrides {
            cfg.apply(k, v)?;
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.runs.len() < MIN_RUNS {
            return Err(Error::Config(format!(
                "state-size study needs at least {MIN_RUNS} runs, got {}",
                self.runs.len()
            )));
        }
        let mut families: Vec<&'static str> = Vec::new();
        for i in 0..self.runs.len() {
            let fam = self.run_config(i)?.family.as_str();
            if !families.contains(&fam) {
                families.push(fam);
            }
        }
        if families.len() < MIN_FAMILIES {
            return Err(Error::Config(format!(
                "state-size study needs at least {MIN_FAMILIES} model families, got {}",
                families.len()
            )));
        }
        Ok(())
    }
}

pub struct StudyReport {
    pub csv: PathBuf,
    pub rho_state_size: f64,
    pub rho_param_count: f64,
    pub ran: usize,
    pub skipped: usize,
}

struct StudyRow {
    name: String,
    family: &'static str,
    state_size: usize,
    param_count: usize,
    delta: f64,
}

fn unseen_task_delta(dir: &Path, dataset: &str) -> Result<f64> {
    let text = std::fs::read_to_string(dir.join("summary.json"))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", dir.display())))?;
    v["curves"]
        .as_array()
        .and_then(|cs| {
            cs.iter().find(|c| {
                c["series"].as_str() == Some("unseen_tasks")
                    && c["dataset"].as_str() == Some(dataset)
            })
        })
        .and_then(|c| c["delta"].as_f64())
        .ok_or_else(|| {
            Error::Format(format!(
                "{}: no unseen_tasks curve for {dataset}",
                dir.display()
            ))
        })
}

/// Runs every architecture (resuming finished ones), then correlates.
/// Emits study.csv, study.json and the two scatter panels.
pub fn run_study(spec: &StudySpec, out_dir: &Path) -> Result<StudyReport> {
    std::fs::create_dir_all(out_dir.join("runs"))?;
    let mut rows: Vec<StudyRow> = Vec::new();
    let mut ran = 0;
    let mut skipped = 0;
    for (i, (name, _)) in spec.runs.iter().enumerate() {
        let cfg = spec.run_config(i)?;
        let dir = out_dir.join("runs").join(name);
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
        // n_x is fixed by the dataset; the width recorded in the model
        // config equals data width + classes, recover it from any run
        let report = {
            let root = crate::datasets::data_root(cfg.data_dir.as_deref());
            let n_x = crate::datasets::load_pair(&cfg.dataset, &root, cfg.downscale)?
                .train
                .n_x();
            state_report(&cfg.model_config(n_x))?
        };
        rows.push(StudyRow {
            name: name.clone(),
            family: cfg.family.as_str(),
            state_size: report.state_size,
            param_count: report.param_count,
            delta: unseen_task_delta(&dir, &cfg.dataset)?,
        });
    }

    let states: Vec<f64> = rows.iter().map(|r| r.state_size as f64).collect();
    let params: Vec<f64> = rows.iter().map(|r| r.param_count as f64).collect();
    let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let rho_state_size = spearman_rho(&states, &deltas)?;
    let rho_param_count = spearman_rho(&params, &deltas)?;

    let mut csv_text = String::from("name,family,state_size,param_count,unseen_task_delta\n");
    for r in &rows {
        csv_text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.name, r.family, r.state_size, r.param_count, r.delta
        ));
    }
    let csv = out_dir.join("study.csv");
    std::fs::write(&csv, &csv_text)?;
    std::fs::write(
        out_dir.join("study.json"),
        format!(
            "{:#}\n",
            serde_json::json!({
                "rho_state_size": rho_state_size,
                "rho_param_count": rho_param_count,
                "runs": rows.len(),
            })
        ),
    )?;

    for (x, out_name, label) in [
        ("state_size", "state-vs-delta.svg", "state size"),
        ("param_count", "params-vs-delta.svg", "parameter count"),
    ] {
        let plot = PlotSpec {
            kind: crate::plot::PlotKind::Scatter,
            input: String::new(),
            x: x.into(),
            y: "unseen_task_delta".into(),
            value: None,
            series: Some("family".into()),
            ci: None,
            x_scale: crate::plot::Scale::Log2,
            y_scale: crate::plot::Scale::Linear,
            title: format!("in-context improvement vs {label}"),
            x_label: Some(label.into()),
            y_label: Some("unseen-task delta".into()),
            filter: Vec::new(),
            out: None,
        };
        std::fs::write(out_dir.join(out_name), render(&plot, &csv_text)?)?;
    }
    Ok(StudyReport { csv, rho_state_size, rho_param_count, ran, skipped })
}

/// Content hash of the whole study, used by callers that cache study
/// directories.
pub fn study_hash(spec: &StudySpec) -> String {
    let mut text = String::new();
    for i in 0..spec.runs.len() {
        if let Ok(cfg) = spec.run_config(i) {
            text.push_str(&spec.runs[i].0);
            text.push('\n');
            text.push_str(&cfg.canonical_text());
        }
    }
    content_hash(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_text(runs: &[&str]) -> String {
        let mut t = String::from("steps=4\n");
        for (i, r) in runs.iter().enumerate() {
            t.push_str(&format!("run.r{i}={r}\n"));
        }
        t
    }

    #[test]
    fn too_few_runs_or_families_is_a_config_error() {
        let err = StudySpec::parse_str(&spec_text(&["family=lstm"; 3])).unwrap_err();
        assert!(format!("{err}").contains("at least 6"));
        let err = StudySpec::parse_str(&spec_text(&["family=lstm"; 6])).unwrap_err();
        assert!(format!("{err}").contains("families"));
    }

    #[test]
    fn overrides_apply_per_run() {
        let spec = StudySpec::parse_str(&spec_text(&[
            "family=lstm,hidden_size=16",
            "family=lstm,hidden_size=32",
            "family=transformer,model_size=32",
            "family=transformer",
            "family=outer_lstm",
            "family=outer_lstm,outer_size=16",
        ]))
        .unwrap();
        assert_eq!(spec.runs.len(), 6);
        let c0 = spec.run_config(0).unwrap();
        assert_eq!(c0.hidden_size, 16);
        assert_eq!(c0.steps, 4);
        let c2 = spec.run_config(2).unwrap();
        assert_eq!(c2.model_size, 32);
    }

    #[test]
    fn bad_override_keys_fail_at_parse() {
        assert!(StudySpec::parse_str(&spec_text(&[
            "family=lstm",
            "family=lstm",
            "family=lstm",
            "family=transformer",
            "family=transformer",
            "familly=transformer",
        ]))
        .is_err());
    }
}
