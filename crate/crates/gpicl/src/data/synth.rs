//! Synthetic stand-in corpora, written through the real on-disk formats.
//!
//! Each dataset id maps to a distinct family of parametric glyphs (blob
//! constellations, bar layouts, curved ridges). Classes are prototypes in
//! pixel space and instances are jittered redraws, so class structure
//! survives random projection and a sequence model can genuinely learn
//! from labeled examples in context. Generation is deterministic per
//! (seed, dataset, split, index) and goes through the same IDX/CIFAR/EMB1
//! writers and loaders as real files would.

use std::path::Path;

use super::{cifar::RECORD_BYTES, emb::write_embeddings, idx};
use crate::error::{Error, Result};
use crate::rng::Stream;

pub const SIDE: usize = 28;
pub const IMAGE_DATASETS: [&str; 4] = ["mnist", "fashion_mnist", "kmnist", "svhn"];

#[derive(Clone, Copy, Debug)]
enum Prim {
    Blob { cx: f64, cy: f64, sigma: f64, amp: f64 },
    Bar { horizontal: bool, pos: f64, width: f64, amp: f64 },
    Ridge { swing: f64, omega: f64, phase: f64, cy: f64, width: f64, amp: f64 },
}

impl Prim {
    fn value(&self, r: f64, c: f64) -> f64 {
        match *self {
            Prim::Blob { cx, cy, sigma, amp } => {
                let d2 = (c - cx) * (c - cx) + (r - cy) * (r - cy);
                amp * (-d2 / (2.0 * sigma * sigma)).exp()
            }
            Prim::Bar { horizontal, pos, width, amp } => {
                let d = if horizontal { r - pos } else { c - pos };
                amp * (-d * d / (2.0 * width * width)).exp()
            }
            Prim::Ridge { swing, omega, phase, cy, width, amp } => {
                let y = cy + swing * (omega * c + phase).sin();
                let d = r - y;
                amp * (-d * d / (2.0 * width * width)).exp()
            }
        }
    }

    fn shifted(&self, dx: f64, dy: f64, gain: f64) -> Prim {
        match *self {
            Prim::Blob { cx, cy, sigma, amp } => Prim::Blob {
                cx: cx + dx,
                cy: cy + dy,
                sigma,
                amp: amp * gain,
            },
            Prim::Bar { horizontal, pos, width, amp } => Prim::Bar {
                horizontal,
                pos: pos + if horizontal { dy } else { dx },
                width,
                amp: amp * gain,
            },
            Prim::Ridge { swing, omega, phase, cy, width, amp } => Prim::Ridge {
                swing,
                omega,
                phase: phase + dx * omega,
                cy: cy + dy,
                width,
                amp: amp * gain,
            },
        }
    }
}

fn class_prototype(dataset: &str, seed: u64, class: usize) -> Vec<Prim> {
    let mut s = Stream::new(seed, &format!("proto/{dataset}"), class as u64);
    let mid = SIDE as f64 / 2.0;
    match dataset {
        // blob constellations
        "mnist" => {
            let n = 2 + class % 3;
            (0..n)
                .map(|_| Prim::Blob {
                    cx: 6.0 + s.next_f64() * 16.0,
                    cy: 6.0 + s.next_f64() * 16.0,
                    sigma: 2.2 + s.next_f64() * 1.6,
                    amp: 0.7 + s.next_f64() * 0.3,
                })
                .collect()
        }
        // axis-aligned bar layouts
        "fashion_mnist" => {
            let h = 1 + class % 2;
            let v = 1 + (class / 2) % 2;
            let mut prims = Vec::new();
            for _ in 0..h {
                prims.push(Prim::Bar {
                    horizontal: true,
                    pos: 4.0 + s.next_f64() * 20.0,
                    width: 1.4 + s.next_f64() * 1.6,
                    amp: 0.7 + s.next_f64() * 0.3,
                });
            }
            for _ in 0..v {
                prims.push(Prim::Bar {
                    horizontal: false,
                    pos: 4.0 + s.next_f64() * 20.0,
                    width: 1.4 + s.next_f64() * 1.6,
                    amp: 0.7 + s.next_f64() * 0.3,
                });
            }
            prims
        }
        // curved ridges
        "kmnist" => {
            let n = 1 + class % 2;
            (0..n)
                .map(|_| Prim::Ridge {
                    swing: 3.0 + s.next_f64() * 5.0,
                    omega: 0.25 + s.next_f64() * 0.5,
                    phase: s.next_f64() * std::f64::consts::TAU,
                    cy: 8.0 + s.next_f64() * 12.0,
                    width: 1.5 + s.next_f64() * 1.0,
                    amp: 0.7 + s.next_f64() * 0.3,
                })
                .collect()
        }
        // blob plus bar mixtures, loosely digit-like
        "svhn" => {
            vec![
                Prim::Blob {
                    cx: mid + (s.next_f64() - 0.5) * 14.0,
                    cy: mid + (s.next_f64() - 0.5) * 14.0,
                    sigma: 2.5 + s.next_f64() * 1.5,
                    amp: 0.7 + s.next_f64() * 0.3,
                },
                Prim::Bar {
                    horizontal: s.next_f64() < 0.5,
                    pos: 6.0 + s.next_f64() * 16.0,
                    width: 1.5 + s.next_f64() * 1.5,
                    amp: 0.6 + s.next_f64() * 0.3,
                },
            ]
        }
        _ => Vec::new(),
    }
}

fn render(prims: &[Prim], noise: &mut Stream, noise_std: f64, out: &mut [u8]) {
    for r in 0..SIDE {
        for c in 0..SIDE {
            let mut v = 0f64;
            for p in prims {
                v += p.value(r as f64, c as f64);
            }
            v += noise.next_gaussian() * noise_std;
            out[r * SIDE + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
}

/// One deterministic instance: common translation and gain jitter on the
/// class prototype, plus pixel noise.
fn instance(dataset: &str, seed: u64, split: &str, index: u64, class: usize, out: &mut [u8]) {
    let proto = class_prototype(dataset, seed, class);
    let mut s = Stream::new(seed, &format!("img/{dataset}/{split}"), index);
    let dx = (s.next_f64() - 0.5) * 3.0;
    let dy = (s.next_f64() - 0.5) * 3.0;
    let gain = 0.85 + s.next_f64() * 0.3;
    let jittered: Vec<Prim> = proto.iter().map(|p| p.shifted(dx, dy, gain)).collect();
    render(&jittered, &mut s, 0.05, out);
}

fn split_images(dataset: &str, seed: u64, split: &str, n: usize) -> (Vec<u8>, Vec<u8>) {
    let mut pixels = vec![0u8; n * SIDE * SIDE];
    let mut labels = vec![0u8; n];
    let mut label_stream = Stream::new(seed, &format!("labels/{dataset}/{split}"), 0);
    for i in 0..n {
        let class = label_stream.next_below(10) as usize;
        labels[i] = class as u8;
        instance(dataset, seed, split, i as u64, class, &mut pixels[i * SIDE * SIDE..(i + 1) * SIDE * SIDE]);
    }
    (pixels, labels)
}

/// Write train/test IDX files for one glyph dataset under `root/<dataset>/`.
pub fn generate_image_dataset(root: &Path, dataset: &str, seed: u64, train_n: usize, test_n: usize) -> Result<()> {
    if !IMAGE_DATASETS.contains(&dataset) {
        return Err(Error::Config(format!(
            "unknown synthetic dataset {dataset:?}; supported: {IMAGE_DATASETS:?}"
        )));
    }
    let dir = root.join(dataset);
    std::fs::create_dir_all(&dir)?;
    let (train_px, train_lb) = split_images(dataset, seed, "train", train_n);
    let (test_px, test_lb) = split_images(dataset, seed, "test", test_n);
    idx::write_idx_images(&dir.join("train-images-idx3-ubyte"), &train_px, train_n, SIDE, SIDE)?;
    idx::write_idx_labels(&dir.join("train-labels-idx1-ubyte"), &train_lb)?;
    idx::write_idx_images(&dir.join("t10k-images-idx3-ubyte"), &test_px, test_n, SIDE, SIDE)?;
    idx::write_idx_labels(&dir.join("t10k-labels-idx1-ubyte"), &test_lb)?;
    Ok(())
}

/// CIFAR-style color stand-in: per-class channel weighting of a blob
/// pattern, written as binary 3073-byte records.
pub fn generate_cifar(root: &Path, seed: u64, train_n: usize, test_n: usize) -> Result<()> {
    let dir = root.join("cifar10");
    std::fs::create_dir_all(&dir)?;
    let write_split = |split: &str, n: usize, path: &Path| -> Result<()> {
        let mut bytes = Vec::with_capacity(n * RECORD_BYTES);
        let mut label_stream = Stream::new(seed, &format!("labels/cifar10/{split}"), 0);
        for i in 0..n {
            let class = label_stream.next_below(10) as usize;
            bytes.push(class as u8);
            let mut cs = Stream::new(seed, "proto/cifar10/chan", class as u64);
            let weights = [
                0.4 + cs.next_f64() * 0.6,
                0.4 + cs.next_f64() * 0.6,
                0.4 + cs.next_f64() * 0.6,
            ];
            let mut canvas = vec![0u8; SIDE * SIDE];
            instance("svhn", seed ^ 0xC1FA, split, i as u64, class, &mut canvas);
            for w in weights {
                // 28x28 canvas padded to 32x32 with a 2-pixel border
                for r in 0..32 {
                    for c in 0..32 {
                        let v = if (2..30).contains(&r) && (2..30).contains(&c) {
                            canvas[(r - 2) * SIDE + (c - 2)] as f64 * w
                        } else {
                            0.0
                        };
                        bytes.push(v.clamp(0.0, 255.0) as u8);
                    }
                }
            }
        }
        std::fs::write(path, &bytes)?;
        Ok(())
    };
    write_split("train", train_n, &dir.join("data_batch_1.bin"))?;
    write_split("test", test_n, &dir.join("test_batch.bin"))?;
    Ok(())
}

/// Feature-space stand-in: class centroids in R^dim plus noise, written as
/// an EMB1 file with an IDX label sidecar.
pub fn generate_embeddings(root: &Path, dataset: &str, seed: u64, n: usize, dim: usize) -> Result<()> {
    let dir = root.join(dataset);
    std::fs::create_dir_all(&dir)?;
    let mut rows = vec![0f32; n * dim];
    let mut labels = vec![0u8; n];
    let mut label_stream = Stream::new(seed, &format!("labels/{dataset}-emb"), 0);
    for i in 0..n {
        let class = label_stream.next_below(10) as usize;
        labels[i] = class as u8;
        let mut centroid = Stream::new(seed, &format!("emb-centroid/{dataset}"), class as u64);
        let mut noise = Stream::new(seed, &format!("emb-noise/{dataset}"), i as u64);
        for d in 0..dim {
            rows[i * dim + d] = (centroid.next_gaussian() + 0.35 * noise.next_gaussian()) as f32;
        }
    }
    write_embeddings(&dir.join("train-features.emb"), &rows, n, dim)?;
    idx::write_idx_labels(&dir.join("train-features-labels-idx1-ubyte"), &labels)?;
    Ok(())
}

/// Everything the experiments need under one root.
pub fn generate_all(root: &Path, seed: u64, train_n: usize, test_n: usize) -> Result<()> {
    for name in IMAGE_DATASETS {
        generate_image_dataset(root, name, seed, train_n, test_n)?;
    }
    generate_cifar(root, seed, train_n.min(2048), test_n.min(512))?;
    generate_embeddings(root, "mnist", seed, test_n.min(1024), 64)?;
    Ok(())
}
