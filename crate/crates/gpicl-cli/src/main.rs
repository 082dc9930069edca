use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use gpicl::data::synth::generate_all;
use gpicl::error::{Error, Result};
use gpicl::gradcheck::finite_difference_check;
use gpicl::meta::meta_loss_node;
use gpicl::models::{init_params, Family, ModelConfig};
use gpicl::rng::Stream;
use gpicl::tensor::Tensor;

use gpicl_cli::datasets::data_root;
use gpicl_cli::experiment::{meta_test_cmd, parse_regime, run_experiment, MetaTestArgs};
use gpicl_cli::grok::{run_grok_probe, GrokSpec};
use gpicl_cli::plot::plot_cmd;
use gpicl_cli::study::{run_study, StudySpec};
use gpicl_cli::sweep::{run_sweep, SweepSpec};

#[derive(Parser)]
#[command(name = "gpicl", about = "Meta-training lab for in-context learners", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Meta-train one run from a key=value config file
    MetaTrain {
        cfg: PathBuf,
        /// run directory (default <out_dir>/<config stem>)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint's in-context learning curve on one dataset
    MetaTest {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: String,
        /// seen_tasks, unseen_tasks or unseen_dataset
        #[arg(long)]
        regime: String,
        #[arg(long, default_value_t = 16)]
        batches: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell of a grid sweep and aggregate the outcomes
    Sweep {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient check across model families
    GradCheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// check a single family instead of all four
        #[arg(long)]
        family: Option<String>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Meta-train a set of architectures and correlate improvement with
    /// state size and parameter count
    StateStudy {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render an SVG chart from a CSV file
    Plot {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Probe for delayed generalization in the memorization regime
    GrokProbe {
        cfg: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic stand-in corpora under the data root
    MakeData {
        /// default $GPICL_DATA_DIR, then ./data
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4096)]
        train_n: usize,
        #[arg(long, default_value_t = 1024)]
        test_n: usize,
    },
}

fn main() {
    match run(Cli::parse()) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

/// Output root for spec-driven commands: --out, else <out_dir>/<spec stem>
/// using the out_dir of the spec's embedded base config.
fn spec_out(spec_path: &Path, out: Option<PathBuf>, out_dir: &str) -> Result<PathBuf> {
    match out {
        Some(d) => Ok(d),
        None => {
            let stem = spec_path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| {
                    Error::Config(format!("cannot derive a name from {}", spec_path.display()))
                })?;
            Ok(PathBuf::from(out_dir).join(stem))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::MetaTrain { cfg, out } => {
            let outcome = run_experiment(&cfg, out.as_deref())?;
            println!("run directory: {}", outcome.dir.display());
            println!("phase: {}", outcome.phase.as_str());
            match outcome.plateau {
                Some(step) => println!("plateau escaped at step {step}"),
                None => println!("plateau: never escaped"),
            }
            for (series, dataset, curve) in &outcome.artifacts.final_curves {
                println!(
                    "{series:>15} {dataset:<14} acc {:.3} -> {:.3} (delta {:+.3})",
                    curve.first_accuracy(),
                    curve.last_accuracy(),
                    curve.delta()
                );
            }
            Ok(())
        }
        Cmd::MetaTest { ckpt, dataset, regime, batches, batch_size, out } => {
            let args = MetaTestArgs {
                ckpt: &ckpt,
                dataset: &dataset,
                regime: parse_regime(&regime)?,
                batches,
                batch_size,
                out: out.as_deref(),
            };
            let dir = meta_test_cmd(&args)?;
            println!("wrote {}", dir.join("eval.csv").display());
            Ok(())
        }
        Cmd::Sweep { spec, out } => {
            let sweep = SweepSpec::parse_file(&spec)?;
            let out = spec_out(&spec, out, &sweep.base.out_dir)?;
            let report = run_sweep(&sweep, &out)?;
            println!(
                "sweep: {} ran, {} resumed, {} failed",
                report.ran, report.skipped, report.failed
            );
            println!("wrote {}", report.csv.display());
            Ok(())
        }
        Cmd::GradCheck { seeds, family, tol } => grad_check(seeds, family.as_deref(), tol),
        Cmd::StateStudy { spec, out } => {
            let study = StudySpec::parse_file(&spec)?;
            let out = spec_out(&spec, out, &study.base.out_dir)?;
            let report = run_study(&study, &out)?;
            println!(
                "study: {} ran, {} resumed; rho(state size) = {:.3}, rho(param count) = {:.3}",
                report.ran, report.skipped, report.rho_state_size, report.rho_param_count
            );
            println!("wrote {}", report.csv.display());
            Ok(())
        }
        Cmd::Plot { spec, out } => {
            let path = plot_cmd(&spec, out.as_deref())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::GrokProbe { cfg, out } => {
            let spec = GrokSpec::parse_file(&cfg)?;
            let out = spec_out(&cfg, out, &spec.base.out_dir)?;
            let report = run_grok_probe(&spec, &out)?;
            for r in &report.runs {
                let conv = r
                    .reading
                    .converged_step
                    .map_or("never".to_string(), |s| format!("step {s}"));
                println!(
                    "weight decay {:>5}: train converged {conv}, max test-loss drop {:.3}, grokking signature: {}",
                    r.weight_decay,
                    r.reading.max_drop,
                    if r.reading.signature { "YES" } else { "no" }
                );
            }
            println!("wrote {}", report.csv.display());
            Ok(())
        }
        Cmd::MakeData { root, seed, train_n, test_n } => {
            let root = root.unwrap_or_else(|| data_root(None));
            generate_all(&root, seed, train_n, test_n)?;
            println!("wrote synthetic corpora under {}", root.display());
            Ok(())
        }
    }
}

/// Small fixed shapes per family; correctness, not capacity, is under test.
fn tiny_config(family: Family) -> ModelConfig {
    ModelConfig {
        family,
        model_size: 8,
        layers: 2,
        heads: 2,
        key_size: 4,
        hidden_size: 6,
        outer_heads: 2,
        outer_size: 3,
        mlp_hidden: 6,
        input_dim: 7,
        output_dim: 3,
        max_seq: if family == Family::Mlp { 1 } else { 4 },
    }
}

fn grad_check(seeds: u64, family: Option<&str>, tol: f64) -> Result<()> {
    let families = match family {
        Some(name) => vec![Family::parse(name)?],
        None => vec![Family::Mlp, Family::Lstm, Family::OuterLstm, Family::Transformer],
    };
    let mut failed = false;
    for (fi, &fam) in families.iter().enumerate() {
        let cfg = tiny_config(fam);
        let t = cfg.max_seq;
        let mut worst = 0f64;
        for seed in 0..seeds {
            let store = init_params::<f64>(&cfg, seed)?;
            let mut s = Stream::new(seed, "grad-check/data", fi as u64);
            let tokens = Tensor::gaussian(&[2, t, cfg.input_dim], &mut s, 0.0, 1.0);
            let targets: Vec<usize> = (0..2 * t)
                .map(|_| s.next_below(cfg.output_dim as u64) as usize)
                .collect();
            let report = finite_difference_check(&store, 1e-6, 6, seed, |store, g| {
                let ids = g.load_store(store)?;
                meta_loss_node(&cfg, g, &ids, &tokens, &targets)
            })?;
            worst = worst.max(report.max_rel_err);
        }
        let ok = worst < tol;
        failed |= !ok;
        println!(
            "{:<12} max relative error {:.3e} over {} seeds: {}",
            fam.as_str(),
            worst,
            seeds,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed {
        return Err(Error::Numerics(format!(
            "gradient check exceeded the {tol:.0e} tolerance"
        )));
    }
    Ok(())
}
