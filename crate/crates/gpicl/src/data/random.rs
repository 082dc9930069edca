//! The random dataset: a handful of uniform points with arbitrary labels.
//! Nothing about an input predicts its label, so the only way to classify
//! it is to memorize input-label bindings from context.

use super::{BaseDataset, Normalizer, Split};
use crate::error::Result;
use crate::rng::Stream;
use crate::tensor::Tensor;

pub const DEFAULT_POINTS: usize = 10;

pub fn make_random_dataset(
    seed: u64,
    n_points: usize,
    input_dim: usize,
    num_classes: usize,
) -> Result<BaseDataset> {
    let mut s = Stream::new(seed, "random-dataset", 0);
    let mut inputs: Vec<f32> = (0..n_points * input_dim)
        .map(|_| s.next_f64() as f32)
        .collect();
    let labels: Vec<usize> = (0..n_points)
        .map(|_| s.next_below(num_classes as u64) as usize)
        .collect();
    let stats = Normalizer::fit(&inputs)?;
    stats.apply(&mut inputs);
    BaseDataset::new(
        "random",
        Split::Test,
        Tensor::new(vec![n_points, input_dim], inputs)?,
        labels,
        num_classes,
    )
}
