//! Binary tensor container, shared by dataset files and checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   4 bytes  "XMDT"
//! version u32      1
//! dtype   u8       0 = 64-bit float
//! rank    u8       number of dims, >= 1
//! dims    rank x u64
//! payload product(dims) x f64
//! crc     u32      CRC-32 of the payload bytes
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"XMDT";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 0;

/// Serialize a tensor into the container byte layout.
pub fn encode_tensor(dims: &[u64], data: &[f64]) -> Result<Vec<u8>> {
    if dims.is_empty() {
        return Err(Error::Format("tensor rank must be at least 1".into()));
    }
    if dims.len() > u8::MAX as usize {
        return Err(Error::Format("tensor rank exceeds 255".into()));
    }
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("dims product overflows u64".into()))?;
    if count != data.len() as u64 {
        return Err(Error::Format(format!(
            "dims product {} does not match data length {}",
            count,
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(4 + 4 + 2 + dims.len() * 8 + data.len() * 8 + 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(DTYPE_F64);
    buf.push(dims.len() as u8);
    for &d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    let payload_start = buf.len();
    for &x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&buf[payload_start..]);
    buf.extend_from_slice(&hasher.finalize().to_le_bytes());
    Ok(buf)
}

/// Parse a container byte buffer back into (dims, data).
pub fn decode_tensor(bytes: &[u8]) -> Result<(Vec<u64>, Vec<f64>)> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Format("truncated tensor file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = take(&mut pos, 1)?[0];
    if dtype != DTYPE_F64 {
        return Err(Error::Format(format!("unsupported dtype code {dtype}")));
    }
    let rank = take(&mut pos, 1)?[0] as usize;
    if rank == 0 {
        return Err(Error::Format("tensor rank must be at least 1".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
    }
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("dims product overflows u64".into()))?;
    let payload_len = count
        .checked_mul(8)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::Format("payload too large".into()))?;
    let payload = take(&mut pos, payload_len)?;
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(payload);
    let computed = hasher.finalize();
    let stored = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checksum".into()));
    }
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

/// Write a tensor file. Bit-exact round trip with [`read_tensor`].
pub fn write_tensor(path: &Path, dims: &[u64], data: &[f64]) -> Result<()> {
    let bytes = encode_tensor(dims, data)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a tensor file written by [`write_tensor`].
pub fn read_tensor(path: &Path) -> Result<(Vec<u64>, Vec<f64>)> {
    let bytes = fs::read(path)?;
    decode_tensor(&bytes)
}
