//! Name-to-corpus resolution under a single data root.

use std::path::{Path, PathBuf};

use gpicl::data::cifar::{load_cifar_binary, ChannelMode};
use gpicl::data::emb::load_embeddings;
use gpicl::data::idx::load_idx_pair;
use gpicl::data::random::make_random_dataset;
use gpicl::data::{BaseDataset, LoadOptions, Split, NUM_CLASSES};
use gpicl::error::{Error, Result};

pub const ENV_DATA_DIR: &str = "GPICL_DATA_DIR";
pub const DATASETS: [&str; 7] =
    ["mnist", "fashion_mnist", "kmnist", "svhn", "cifar10", "mnist_emb", "random"];

/// Explicit config value, then $GPICL_DATA_DIR, then ./data.
pub fn data_root(configured: Option<&str>) -> PathBuf {
    match configured {
        Some(dir) => PathBuf::from(dir),
        None => match std::env::var(ENV_DATA_DIR) {
            Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => PathBuf::from("data"),
        },
    }
}

#[derive(Debug)]
pub struct LoadedData {
    pub train: BaseDataset,
    /// held-out split, normalized with the train statistics
    pub test: BaseDataset,
}

fn side_opt(downscale: usize) -> Option<usize> {
    if downscale == 0 {
        None
    } else {
        Some(downscale)
    }
}

fn unknown(name: &str) -> Error {
    Error::Config(format!(
        "unknown dataset {name:?}; available: {}",
        DATASETS.join(", ")
    ))
}

fn missing(name: &str, root: &Path) -> Error {
    Error::Config(format!(
        "dataset {name:?} not found under {}; run `gpicl make-data` or point {ENV_DATA_DIR} at a data root",
        root.display()
    ))
}

/// Train+test splits for meta-training. The feature-space and synthetic
/// corpora have no train split and are only valid for evaluation.
pub fn load_pair(name: &str, root: &Path, downscale: usize) -> Result<LoadedData> {
    match name {
        "mnist" | "fashion_mnist" | "kmnist" | "svhn" => {
            let dir = root.join(name);
            if !dir.join("train-images-idx3-ubyte").exists() {
                return Err(missing(name, root));
            }
            let (train, test) = load_idx_pair(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
                name,
                side_opt(downscale),
            )?;
            Ok(LoadedData { train, test })
        }
        "cifar10" => {
            let dir = root.join("cifar10");
            let batches: Vec<PathBuf> = (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .filter(|p| p.exists())
                .collect();
            if batches.is_empty() {
                return Err(missing(name, root));
            }
            let refs: Vec<&Path> = batches.iter().map(|p| p.as_path()).collect();
            let opts = LoadOptions { downscale_to: side_opt(downscale), stats: None };
            let (train, stats) =
                load_cifar_binary(&refs, name, Split::Train, ChannelMode::Grayscale, &opts)?;
            let opts = LoadOptions { downscale_to: side_opt(downscale), stats: Some(stats) };
            let (test, _) = load_cifar_binary(
                &[&dir.join("test_batch.bin")],
                name,
                Split::Test,
                ChannelMode::Grayscale,
                &opts,
            )?;
            Ok(LoadedData { train, test })
        }
        "mnist_emb" | "random" => Err(Error::Config(format!(
            "dataset {name:?} has no train/test split; it is evaluation-only"
        ))),
        other => Err(unknown(other)),
    }
}

/// A single evaluation corpus. `n_x` must match the width the model was
/// trained on; image corpora get there via `downscale`, the synthetic
/// random dataset is generated at that width directly.
pub fn load_eval(name: &str, root: &Path, downscale: usize, n_x: usize) -> Result<BaseDataset> {
    let check_width = |ds: BaseDataset| -> Result<BaseDataset> {
        if ds.n_x() != n_x {
            return Err(Error::Config(format!(
                "dataset {name:?} has width {} but the model expects {n_x}",
                ds.n_x()
            )));
        }
        Ok(ds)
    };
    match name {
        "mnist" | "fashion_mnist" | "kmnist" | "svhn" | "cifar10" => {
            check_width(load_pair(name, root, downscale)?.test)
        }
        "mnist_emb" => {
            let dir = root.join("mnist");
            let emb = dir.join("train-features.emb");
            if !emb.exists() {
                return Err(missing(name, root));
            }
            let (ds, _) = load_embeddings(
                &emb,
                &dir.join("train-features-labels-idx1-ubyte"),
                name,
                Split::Test,
                &LoadOptions::default(),
            )?;
            check_width(ds)
        }
        "random" => make_random_dataset(0, 10, n_x, NUM_CLASSES),
        other => Err(unknown(other)),
    }
}
