//! Pre-computed feature files: magic "EMB1", u32 count, u32 dim, then
//! count*dim f32 values, all little-endian. Labels ride in a separate IDX
//! label file. Features are z-normalized and then augmented exactly like
//! raw pixels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::idx::read_idx_labels;
use super::{finalize, BaseDataset, LoadOptions, Normalizer, Split};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";

pub fn write_embeddings(path: &Path, rows: &[f32], count: usize, dim: usize) -> Result<()> {
    if rows.len() != count * dim {
        return Err(Error::Shape(format!(
            "embedding write: {} values for {count}x{dim}",
            rows.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(count as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for &v in rows {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_embeddings(
    emb_path: &Path,
    labels_path: &Path,
    name: &str,
    split: Split,
    opts: &LoadOptions,
) -> Result<(BaseDataset, Normalizer)> {
    let mut r = BufReader::new(File::open(emb_path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("{}: truncated magic: {e}", emb_path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:?}, expected \"EMB1\"",
            emb_path.display()
        )));
    }
    let count = read_le_u32(&mut r, emb_path, "count")? as usize;
    let dim = read_le_u32(&mut r, emb_path, "dim")? as usize;
    if count == 0 || dim == 0 {
        return Err(Error::Format(format!(
            "{}: degenerate embedding table {count}x{dim}",
            emb_path.display()
        )));
    }
    let mut raw = vec![0u8; count * dim * 4];
    r.read_exact(&mut raw)
        .map_err(|e| Error::Format(format!("{}: truncated payload: {e}", emb_path.display())))?;
    let features: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!(
            "{}: non-finite feature values",
            emb_path.display()
        )));
    }
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != count {
        return Err(Error::Format(format!(
            "{name}: {count} embeddings but {} labels",
            labels.len()
        )));
    }
    finalize(name, split, features, count, dim, labels, opts.stats)
}

fn read_le_u32<R: Read>(r: &mut R, path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("{}: truncated {what}: {e}", path.display())))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::super::idx::write_idx_labels;
    use super::*;
    use crate::rng::Stream;

    fn write_sample(dir: &Path, count: usize, dim: usize) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut s = Stream::new(21, "emb-test", 0);
        let rows: Vec<f32> = (0..count * dim).map(|_| s.next_gaussian() as f32).collect();
        let labels: Vec<u8> = (0..count).map(|_| s.next_below(10) as u8).collect();
        let ep = dir.join("feats.emb");
        let lp = dir.join("labels.idx");
        write_embeddings(&ep, &rows, count, dim).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        (ep, lp)
    }

    #[test]
    fn round_trip_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let (ep, lp) = write_sample(dir.path(), 100, 512);
        let (ds, _) = load_embeddings(&ep, &lp, "mnist-feats", Split::Train, &LoadOptions::default()).unwrap();
        assert_eq!(ds.n(), 100);
        assert_eq!(ds.n_x(), 512);
    }

    #[test]
    fn normalization_recomputed_on_feature_space() {
        let dir = tempfile::tempdir().unwrap();
        let (ep, lp) = write_sample(dir.path(), 64, 32);
        let (ds, _) = load_embeddings(&ep, &lp, "feats", Split::Train, &LoadOptions::default()).unwrap();
        let refit = Normalizer::fit(ds.inputs.data()).unwrap();
        assert!(refit.mean.abs() < 1e-3, "mean {}", refit.mean);
        assert!((refit.std - 1.0).abs() < 1e-2, "std {}", refit.std);
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ep, lp) = write_sample(dir.path(), 10, 8);
        let bytes = std::fs::read(&ep).unwrap();
        std::fs::write(&ep, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(
            load_embeddings(&ep, &lp, "x", Split::Train, &LoadOptions::default()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.emb");
        std::fs::write(&p, b"EMB2\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        let lp = dir.path().join("l.idx");
        write_idx_labels(&lp, &[0]).unwrap();
        assert!(matches!(
            load_embeddings(&p, &lp, "x", Split::Train, &LoadOptions::default()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ep, lp) = write_sample(dir.path(), 10, 8);
        write_idx_labels(&lp, &[1, 2]).unwrap();
        assert!(matches!(
            load_embeddings(&ep, &lp, "x", Split::Train, &LoadOptions::default()),
            Err(Error::Format(_))
        ));
    }
}
