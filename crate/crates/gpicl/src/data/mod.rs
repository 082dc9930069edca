//! Base datasets and the shared preprocessing path: optional block-mean
//! downscaling, then z-normalization with a single mean/std over all
//! examples and pixels. Statistics are fit on the train split and reused
//! for the test split.

pub mod cifar;
pub mod emb;
pub mod idx;
pub mod random;
pub mod synth;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Every supported base dataset is a 10-way classification problem; the
/// one-hot label block in tokens is sized accordingly.
pub const NUM_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Flattened, normalized examples ready for task augmentation.
#[derive(Clone, Debug)]
pub struct BaseDataset {
    pub name: String,
    pub split: Split,
    /// [n, n_x]
    pub inputs: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl BaseDataset {
    pub fn new(
        name: &str,
        split: Split,
        inputs: Tensor<f32>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if inputs.rank() != 2 {
            return Err(Error::Shape(format!(
                "dataset inputs must be [n, n_x], got {:?}",
                inputs.shape()
            )));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::Format(format!(
                "{name}: {} inputs but {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::EmptyBatch(format!("{name}: empty dataset")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Format(format!(
                "{name}: label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(BaseDataset {
            name: name.to_string(),
            split,
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn n(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn n_x(&self) -> usize {
        self.inputs.shape()[1]
    }

    /// One example's input row.
    pub fn input_row(&self, i: usize) -> &[f32] {
        let nx = self.n_x();
        &self.inputs.data()[i * nx..(i + 1) * nx]
    }
}

/// Global z-normalization statistics over all examples and pixels.
#[derive(Clone, Copy, Debug)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn fit(data: &[f32]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyBatch("cannot fit normalizer on empty data".into()));
        }
        let n = data.len() as f64;
        let mut sum = 0f64;
        for &v in data {
            sum += v as f64;
        }
        let mean = sum / n;
        let mut var = 0f64;
        for &v in data {
            let d = v as f64 - mean;
            var += d * d;
        }
        let std = (var / n).sqrt();
        if std < 1e-12 {
            return Err(Error::Numerics("normalizer: zero variance input".into()));
        }
        Ok(Normalizer { mean, std })
    }

    pub fn apply(&self, data: &mut [f32]) {
        let (m, s) = (self.mean as f32, self.std as f32);
        for v in data.iter_mut() {
            *v = (*v - m) / s;
        }
    }
}

/// Boundaries of destination block `r` when splitting `src` positions into
/// `dst` blocks: [ceil(r*src/dst), ceil((r+1)*src/dst)). Every block is
/// non-empty for dst <= src and remainder pixels spread across blocks.
pub(crate) fn block_bounds(src: usize, dst: usize, r: usize) -> (usize, usize) {
    let lo = (r * src).div_ceil(dst);
    let hi = ((r + 1) * src).div_ceil(dst);
    (lo, hi)
}

/// Mean-pool each [h, w] image down to [target, target]. Returns the pooled
/// pixels and the new per-image width (target * target).
pub fn downscale(images: &[f32], n: usize, h: usize, w: usize, target: usize) -> Result<Vec<f32>> {
    if target == 0 || target > h || target > w {
        return Err(Error::Config(format!(
            "downscale target {target} invalid for {h}x{w} images"
        )));
    }
    let mut out = vec![0f32; n * target * target];
    for img in 0..n {
        let src = &images[img * h * w..(img + 1) * h * w];
        let dst = &mut out[img * target * target..(img + 1) * target * target];
        for br in 0..target {
            let (r0, r1) = block_bounds(h, target, br);
            for bc in 0..target {
                let (c0, c1) = block_bounds(w, target, bc);
                let mut acc = 0f64;
                for r in r0..r1 {
                    for c in c0..c1 {
                        acc += src[r * w + c] as f64;
                    }
                }
                dst[br * target + bc] = (acc / ((r1 - r0) * (c1 - c0)) as f64) as f32;
            }
        }
    }
    Ok(out)
}

/// Options shared by the file-based loaders.
#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Mean-pool square images down to this side length before flattening.
    pub downscale_to: Option<usize>,
    /// Reuse existing statistics (test split); fit fresh ones when absent.
    pub stats: Option<Normalizer>,
}

pub(crate) fn finalize(
    name: &str,
    split: Split,
    mut pixels: Vec<f32>,
    n: usize,
    n_x: usize,
    labels: Vec<usize>,
    stats: Option<Normalizer>,
) -> Result<(BaseDataset, Normalizer)> {
    let stats = match stats {
        Some(s) => s,
        None => Normalizer::fit(&pixels)?,
    };
    stats.apply(&mut pixels);
    let ds = BaseDataset::new(
        name,
        split,
        Tensor::new(vec![n, n_x], pixels)?,
        labels,
        NUM_CLASSES,
    )?;
    Ok((ds, stats))
}
