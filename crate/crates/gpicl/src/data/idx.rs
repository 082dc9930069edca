//! IDX image/label files: big-endian headers, magic 0x00000803 for images
//! (u8, 3 dims) and 0x00000801 for labels (u8, 1 dim).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{downscale, finalize, BaseDataset, LoadOptions, Normalizer, Split};
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

pub struct IdxImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_be_u32(&mut r, path, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "{}: image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}",
            path.display()
        )));
    }
    let n = read_be_u32(&mut r, path, "count")? as usize;
    let rows = read_be_u32(&mut r, path, "rows")? as usize;
    let cols = read_be_u32(&mut r, path, "cols")? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format(format!(
            "{}: degenerate dimensions {n}x{rows}x{cols}",
            path.display()
        )));
    }
    let mut pixels = vec![0u8; n * rows * cols];
    r.read_exact(&mut pixels).map_err(|e| {
        Error::Format(format!("{}: truncated pixel payload: {e}", path.display()))
    })?;
    Ok(IdxImages { n, rows, cols, pixels })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_be_u32(&mut r, path, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "{}: label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}",
            path.display()
        )));
    }
    let n = read_be_u32(&mut r, path, "count")? as usize;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes).map_err(|e| {
        Error::Format(format!("{}: truncated label payload: {e}", path.display()))
    })?;
    Ok(bytes.into_iter().map(|b| b as usize).collect())
}

pub fn write_idx_images(path: &Path, pixels: &[u8], n: usize, rows: usize, cols: usize) -> Result<()> {
    if pixels.len() != n * rows * cols {
        return Err(Error::Shape(format!(
            "idx write: {} pixels for {n}x{rows}x{cols}",
            pixels.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    w.write_all(&(n as u32).to_be_bytes())?;
    w.write_all(&(rows as u32).to_be_bytes())?;
    w.write_all(&(cols as u32).to_be_bytes())?;
    w.write_all(pixels)?;
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

/// Load one split, downscaling and normalizing per the options. Returns the
/// dataset plus the statistics used, so a test split can reuse them.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    name: &str,
    split: Split,
    opts: &LoadOptions,
) -> Result<(BaseDataset, Normalizer)> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.n != labels.len() {
        return Err(Error::Format(format!(
            "{name}: {} images but {} labels",
            images.n,
            labels.len()
        )));
    }
    let raw: Vec<f32> = images.pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let (pixels, n_x) = match opts.downscale_to {
        Some(t) => (downscale(&raw, images.n, images.rows, images.cols, t)?, t * t),
        None => (raw, images.rows * images.cols),
    };
    finalize(name, split, pixels, images.n, n_x, labels, opts.stats)
}

/// Train+test pair with statistics fit on train.
pub fn load_idx_pair(
    train_images: &Path,
    train_labels: &Path,
    test_images: &Path,
    test_labels: &Path,
    name: &str,
    downscale_to: Option<usize>,
) -> Result<(BaseDataset, BaseDataset)> {
    let opts = LoadOptions { downscale_to, stats: None };
    let (train, stats) = load_idx(train_images, train_labels, name, Split::Train, &opts)?;
    let opts = LoadOptions { downscale_to, stats: Some(stats) };
    let (test, _) = load_idx(test_images, test_labels, name, Split::Test, &opts)?;
    Ok((train, test))
}

fn read_be_u32<R: Read>(r: &mut R, path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("{}: truncated {what}: {e}", path.display())))?;
    Ok(u32::from_be_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn write_pair(dir: &Path, n: usize, side: usize, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut s = Stream::new(seed, "idx-test", 0);
        let pixels: Vec<u8> = (0..n * side * side).map(|_| s.next_below(256) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|_| s.next_below(10) as u8).collect();
        let ip = dir.join("images.idx");
        let lp = dir.join("labels.idx");
        write_idx_images(&ip, &pixels, n, side, side).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn round_trip_and_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), 64, 28, 9);
        let (ds, stats) = load_idx(&ip, &lp, "mnist", Split::Train, &LoadOptions::default()).unwrap();
        assert_eq!(ds.n(), 64);
        assert_eq!(ds.n_x(), 784);
        assert_eq!(ds.num_classes, 10);
        // fitting split statistics: mean ~ 0, std ~ 1
        let refit = Normalizer::fit(ds.inputs.data()).unwrap();
        assert!(refit.mean.abs() < 1e-3, "mean {}", refit.mean);
        assert!((refit.std - 1.0).abs() < 1e-2, "std {}", refit.std);
        assert!(stats.std > 0.0);
    }

    #[test]
    fn downscale_to_8_gives_64_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), 16, 28, 10);
        let opts = LoadOptions { downscale_to: Some(8), stats: None };
        let (ds, _) = load_idx(&ip, &lp, "mnist", Split::Train, &opts).unwrap();
        assert_eq!(ds.n_x(), 64);
    }

    #[test]
    fn test_split_reuses_train_statistics() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), 64, 14, 11);
        let dir2 = tempfile::tempdir().unwrap();
        let (ip2, lp2) = write_pair(dir2.path(), 32, 14, 12);
        let (train, test) = load_idx_pair(&ip, &lp, &ip2, &lp2, "mnist", None).unwrap();
        assert_eq!(train.split, Split::Train);
        assert_eq!(test.split, Split::Test);
        // the test split was normalized with train statistics, so its own
        // refit statistics differ from (0, 1) in general
        let refit = Normalizer::fit(test.inputs.data()).unwrap();
        assert!(refit.mean.abs() > 1e-6 || (refit.std - 1.0).abs() > 1e-6);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.idx");
        std::fs::write(&p, 0x0000_0804u32.to_be_bytes()).unwrap();
        assert!(matches!(read_idx_images(&p), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.idx");
        std::fs::write(&p, IMAGE_MAGIC.to_be_bytes()).unwrap();
        assert!(matches!(read_idx_images(&p), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = write_pair(dir.path(), 4, 8, 13);
        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_idx_images(&ip), Err(Error::Format(_))));
    }

    #[test]
    fn image_label_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), 8, 8, 14);
        write_idx_labels(&lp, &[1, 2, 3]).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp, "x", Split::Train, &LoadOptions::default()),
            Err(Error::Format(_))
        ));
    }
}
