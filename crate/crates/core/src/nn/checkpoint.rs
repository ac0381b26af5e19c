//! Binary model checkpoints.
//!
//! All integers and floats are little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `LOBMODL\0` |
//! | 4 | format version (`u32`, currently 1) |
//! | 4 + n | architecture spec as JSON (`u32` length, UTF-8) |
//! | 8 | initialization seed (`u64`) |
//! | 4 | tensor count (`u32`) |
//! | per tensor | `u32` rank, `u32` per dimension, then `f64` values row-major |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::arch::ArchitectureSpec;
use super::model::Model;
use super::tensor::Tensor;
use super::NnError;

const MAGIC: &[u8; 8] = b"LOBMODL\0";
const VERSION: u32 = 1;

pub fn write_model<W: Write>(mut out: W, model: &Model) -> Result<(), NnError> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let spec = serde_json::to_vec(model.spec()).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    out.write_all(&(spec.len() as u32).to_le_bytes())?;
    out.write_all(&spec)?;
    out.write_all(&model.seed().to_le_bytes())?;
    out.write_all(&(model.parameters().len() as u32).to_le_bytes())?;
    for p in model.parameters() {
        out.write_all(&(p.shape().len() as u32).to_le_bytes())?;
        for &d in p.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in p.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn u32_from<R: Read>(input: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Upper bound on any single length field, to reject garbage before allocating.
const MAX_LEN: u32 = 1 << 28;

pub fn read_model<R: Read>(mut input: R) -> Result<Model, NnError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("not a model checkpoint".into()));
    }
    let version = u32_from(&mut input)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u32_from(&mut input)?;
    if len > MAX_LEN {
        return Err(NnError::Checkpoint("spec too long".into()));
    }
    let mut spec = vec![0u8; len as usize];
    input.read_exact(&mut spec)?;
    let spec: ArchitectureSpec =
        serde_json::from_slice(&spec).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut seed = [0u8; 8];
    input.read_exact(&mut seed)?;
    let seed = u64::from_le_bytes(seed);
    let count = u32_from(&mut input)?;
    if count > MAX_LEN {
        return Err(NnError::Checkpoint("too many tensors".into()));
    }
    let mut params = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let rank = u32_from(&mut input)?;
        if rank > 8 {
            return Err(NnError::Checkpoint(format!("tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| u32_from(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        if n > MAX_LEN as usize {
            return Err(NnError::Checkpoint("tensor too large".into()));
        }
        let mut raw = vec![0u8; n * 8];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push(Tensor::new(shape, data));
    }
    Model::from_parts(spec, seed, params)
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<(), NnError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_model(&mut out, model)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, NnError> {
    read_model(BufReader::new(File::open(path)?))
}
