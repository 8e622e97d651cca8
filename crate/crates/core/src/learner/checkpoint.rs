//! Parameter checkpoints: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header with the layout, then the values as little-endian
//! `f64`. Files written from `f32` parameters load back bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParameterVector, TensorSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"DTIFLPV1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    layout: Vec<TensorSpec>,
    len: usize,
}

pub fn write_params<T: Scalar, W: Write>(params: &ParameterVector<T>, mut out: W) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        layout: params.layout().to_vec(),
        len: params.len(),
    })?;
    let io = |e| Error::io("<checkpoint>", e);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&(header.len() as u64).to_le_bytes())
        .map_err(io)?;
    out.write_all(&header).map_err(io)?;
    for v in params.values() {
        out.write_all(&v.to_f64_lossless().to_le_bytes())
            .map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads one checkpoint, leaving `input` positioned just after it.
pub fn read_params<T: Scalar, R: Read>(mut input: R) -> Result<ParameterVector<T>> {
    let io = |e| Error::io("<checkpoint>", e);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(io)?;
    let header_len = u64::from_le_bytes(len) as usize;
    if header_len > 1 << 24 {
        return Err(Error::Checkpoint(format!(
            "header length {header_len} too large"
        )));
    }
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header).map_err(io)?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut values = Vec::with_capacity(header.len);
    let mut buf = [0u8; 8];
    for _ in 0..header.len {
        input.read_exact(&mut buf).map_err(io)?;
        values.push(T::lit(f64::from_le_bytes(buf)));
    }
    ParameterVector::new(header.layout, values)
}

pub fn save_params<T: Scalar>(params: &ParameterVector<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_params(params, BufWriter::new(file))
}

pub fn load_params<T: Scalar>(path: impl AsRef<Path>) -> Result<ParameterVector<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(BufReader::new(file))
}
