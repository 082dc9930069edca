//! Checkpoint serialization: magic "GPCK", version, tensor count, then per
//! tensor (in name order) a length-prefixed name, rank, dims, a dtype tag,
//! and raw little-endian scalars. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::store::ParamStore;
use crate::tensor::{Dtype, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"GPCK";
const VERSION: u32 = 1;

pub fn save<E: Scalar, P: AsRef<Path>>(store: &ParamStore<E>, path: P) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&[E::DTYPE.tag()])?;
        for &v in t.data() {
            w.write_all(&v.to_le_bytes_vec())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load<E: Scalar, P: AsRef<Path>>(path: P) -> Result<ParamStore<E>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:?}, expected \"GPCK\"",
            path.display()
        )));
    }
    let version = read_u32(&mut r, path, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let count = read_u32(&mut r, path, "tensor count")? as usize;
    let mut store = ParamStore::new();
    for i in 0..count {
        let name_len = read_u32(&mut r, path, "name length")? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!(
                "{}: tensor {i} name length {name_len} is implausible",
                path.display()
            )));
        }
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, path, "name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("{}: tensor {i} name is not UTF-8", path.display())))?;
        let rank = read_u32(&mut r, path, "rank")? as usize;
        if rank > 8 {
            return Err(Error::Format(format!(
                "{}: tensor {name:?} rank {rank} is implausible",
                path.display()
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, path, "dim")? as usize);
        }
        let mut tag = [0u8; 1];
        read_exact(&mut r, &mut tag, path, "dtype tag")?;
        let dtype = Dtype::from_tag(tag[0]).map_err(|_| {
            Error::Format(format!("{}: tensor {name:?} has unknown dtype tag {}", path.display(), tag[0]))
        })?;
        if dtype != E::DTYPE {
            return Err(Error::Format(format!(
                "{}: tensor {name:?} is {dtype:?}, expected {:?}",
                path.display(),
                E::DTYPE
            )));
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * E::byte_width()];
        read_exact(&mut r, &mut raw, path, "tensor data")?;
        let data: Vec<E> = raw
            .chunks_exact(E::byte_width())
            .map(E::from_le_slice)
            .collect();
        store.insert(&name, Tensor::new(shape, data)?)?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format(format!(
            "{}: trailing bytes after {count} tensors",
            path.display()
        )));
    }
    Ok(store)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        Error::Format(format!("{}: truncated while reading {what}: {e}", path.display()))
    })
}

fn read_u32<R: Read>(r: &mut R, path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path, what)?;
    Ok(u32::from_le_bytes(b))
}
