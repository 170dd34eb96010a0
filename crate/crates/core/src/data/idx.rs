//! IDX files, the container MNIST is distributed in.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! magic: u32      0x00000803 (u8, 3 dims) or 0x00000801 (u8, 1 dim)
//! dims:  u32 * n  one per dimension
//! data:  u8 * prod(dims)
//! ```

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC_U8_1D: u32 = 0x0000_0801;
pub const MAGIC_U8_3D: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        0x0000_0800 | self.dims.len() as u32
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            expected: at + 4,
            actual: bytes.len(),
        })
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = read_u32(bytes, 0)?;
    let ndims = match magic {
        MAGIC_U8_1D => 1,
        MAGIC_U8_3D => 3,
        other => {
            return Err(Error::Format(format!(
                "unsupported IDX magic 0x{other:08x} (expected 0x{MAGIC_U8_3D:08x} or 0x{MAGIC_U8_1D:08x})"
            )))
        }
    };
    let mut dims = Vec::with_capacity(ndims);
    for k in 0..ndims {
        dims.push(read_u32(bytes, 4 + 4 * k)? as usize);
    }
    let header = 4 + 4 * ndims;
    let payload: usize = dims.iter().product();
    let expected = header + payload;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after IDX payload",
            bytes.len() - expected
        )));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn write_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&array.magic().to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

/// Reads an IDX file, transparently un-gzipping it when it starts with the
/// gzip signature.
pub fn read_idx_file(path: impl AsRef<Path>) -> Result<IdxArray> {
    let raw = std::fs::read(path.as_ref())?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut plain = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice()).read_to_end(&mut plain)?;
        parse_idx(&plain)
    } else {
        parse_idx(&raw)
    }
}
