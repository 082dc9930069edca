//! CIFAR-10 binary batches: 3073-byte records, 1 label byte followed by
//! 3072 pixel bytes in planar RGB order (1024 per channel).

use std::path::Path;

use super::{downscale, finalize, BaseDataset, LoadOptions, Normalizer, Split};
use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 3073;
const CHANNEL_PIXELS: usize = 1024;
const SIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelMode {
    /// Keep all three planes; N_x = 3 * side * side after any downscale.
    Rgb,
    /// Average the three planes first; N_x = side * side.
    Grayscale,
}

/// Load one or more binary batches as a single split.
pub fn load_cifar_binary(
    paths: &[&Path],
    name: &str,
    split: Split,
    mode: ChannelMode,
    opts: &LoadOptions,
) -> Result<(BaseDataset, Normalizer)> {
    if paths.is_empty() {
        return Err(Error::Config("no CIFAR batch files given".into()));
    }
    let mut labels = Vec::new();
    let mut planes: Vec<f32> = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path)?;
        if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
            return Err(Error::Format(format!(
                "{}: length {} is not a positive multiple of {RECORD_BYTES}",
                path.display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(RECORD_BYTES) {
            labels.push(record[0] as usize);
            let pix = &record[1..];
            match mode {
                ChannelMode::Rgb => {
                    planes.extend(pix.iter().map(|&b| b as f32 / 255.0));
                }
                ChannelMode::Grayscale => {
                    for i in 0..CHANNEL_PIXELS {
                        let sum = pix[i] as f32
                            + pix[CHANNEL_PIXELS + i] as f32
                            + pix[2 * CHANNEL_PIXELS + i] as f32;
                        planes.push(sum / (3.0 * 255.0));
                    }
                }
            }
        }
    }
    let n = labels.len();
    let channels = match mode {
        ChannelMode::Rgb => 3,
        ChannelMode::Grayscale => 1,
    };
    let (pixels, n_x) = match opts.downscale_to {
        Some(t) => {
            // Downscale each channel plane independently; planes stay planar.
            (downscale(&planes, n * channels, SIDE, SIDE, t)?, channels * t * t)
        }
        None => (planes, channels * SIDE * SIDE),
    };
    finalize(name, split, pixels, n, n_x, labels, opts.stats)
}
