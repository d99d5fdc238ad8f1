//! Named-tensor checkpoint files.
//!
//! Layout (little-endian): magic `PNFPCKPT`, version byte, `u32` tensor count, then per tensor
//! `u32` name length, UTF-8 name, `u32` rank, `u64` per dimension and the `f32` payload.

use std::io::{Read, Write};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PNFPCKPT";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

impl NamedTensor {
    pub fn new<T: Real>(name: impl Into<String>, tensor: &Tensor<T>) -> Self {
        Self {
            name: name.into(),
            tensor: tensor.cast(),
        }
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for nt in tensors {
        let name = nt.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = nt.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(nt.tensor.len() * 4);
        for v in nt.tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        Error::Stream(e)
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing PNFPCKPT magic".into()));
    }
    if magic[8] != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            magic[8]
        )));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Format("tensor name not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(truncated)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload).map_err(truncated)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(NamedTensor {
            name,
            tensor: Tensor::new(shape, data)?,
        });
    }
    Ok(out)
}
