//! Binary parameter file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"LHCGPRM1"
//! u32    tensor count
//! per tensor:
//!   u32  name length, then UTF-8 name bytes
//!   u32  rank, then rank × u64 dimensions
//!   f32  values, row-major
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::nn::Param;

const MAGIC: &[u8; 8] = b"LHCGPRM1";

pub fn write_params<'a, W: Write>(mut w: W, tensors: impl IntoIterator<Item = (String, &'a ArrayD<f64>)>) -> Result<()> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::ParamFormat("truncated file".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_params<R: Read>(mut r: R) -> Result<Vec<(String, ArrayD<f64>)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::ParamFormat("unrecognized header".into()));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::ParamFormat("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(truncated)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw).map_err(truncated)?;
        let values: Vec<f64> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let t = ArrayD::from_shape_vec(IxDyn(&shape), values).map_err(|e| Error::ParamFormat(e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_params<'a>(path: &Path, tensors: impl IntoIterator<Item = (String, &'a ArrayD<f64>)>) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_params(f, tensors)
}

pub fn load_params(path: &Path) -> Result<Vec<(String, ArrayD<f64>)>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_params(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Moves tensors from `pool` into `params`, matching by name and shape.
pub(crate) fn assign_tensors(
    names: &[String],
    params: Vec<&mut Param>,
    pool: &mut HashMap<String, ArrayD<f64>>,
) -> Result<()> {
    for (name, p) in names.iter().zip(params) {
        let t = pool.remove(name).ok_or_else(|| Error::ParamFormat(format!("missing tensor {name}")))?;
        if t.shape() != p.value.shape() {
            return Err(Error::ParamFormat(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    Ok(())
}
