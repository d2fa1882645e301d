// SPDX-License-Identifier: Apache-2.0

//! Big-endian IDX files of unsigned bytes, optionally gzip-compressed.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// A parsed IDX tensor of `u8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Idx {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses IDX bytes, requiring the given magic number.
pub fn parse(bytes: &[u8], magic: u32, what: &str) -> Result<Idx> {
    let found = be_u32(bytes, 0).ok_or_else(|| Error::format(what, "file shorter than its header"))?;
    if found != magic {
        return Err(Error::format(what, format!("bad magic {found:#010x}, expected {magic:#010x}")));
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let v = be_u32(bytes, 4 + 4 * d).ok_or_else(|| Error::format(what, "truncated header"))?;
        dims.push(v as usize);
    }
    let start = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    let body = &bytes[start..];
    if body.len() < len {
        return Err(Error::format(what, format!("truncated: header promises {len} bytes, found {}", body.len())));
    }
    if body.len() > len {
        return Err(Error::format(what, format!("{} trailing bytes after data", body.len() - len)));
    }
    Ok(Idx {
        dims,
        data: body.to_vec(),
    })
}

/// Reads a file, transparently inflating gzip content.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path.display().to_string(), format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn encode(magic: u32, dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

pub fn write(path: &Path, magic: u32, dims: &[usize], data: &[u8], gzip: bool) -> Result<()> {
    let bytes = encode(magic, dims, data);
    if gzip {
        let mut enc = GzEncoder::new(File::create(path)?, Compression::default());
        enc.write_all(&bytes)?;
        enc.finish()?;
    } else {
        std::fs::write(path, bytes)?;
    }
    Ok(())
}
