//! Raw tensor container: a little-endian binary file holding one dense
//! tensor.
//!
//! Layout:
//! ```text
//! magic    8 bytes   "HZBTNSR\0"
//! version  u16 le    1
//! dtype    u8        1 = f32 le, 2 = f64 le
//! rank     u8        1..=8
//! extents  rank x u64 le, each >= 1
//! payload  product(extents) * sizeof(dtype) bytes, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const MAGIC: &[u8; 8] = b"HZBTNSR\0";
pub const VERSION: u16 = 1;
const MAX_RANK: u8 = 8;

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "tensor container",
        reason: reason.into(),
    }
}

pub fn encode_tensor<E: Element>(t: &Tensor<E>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + t.shape().len() * 8 + t.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(E::DTYPE_CODE);
    out.push(t.shape().len() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        match E::DTYPE_CODE {
            1 => out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes()),
            _ => out.extend_from_slice(&v.to_f64().to_le_bytes()),
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err("truncated input"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Decode one tensor; the element type must match the stored dtype and the
/// payload must span the rest of the buffer exactly.
pub fn decode_tensor<E: Element>(bytes: &[u8]) -> Result<Tensor<E>> {
    let (t, used) = decode_tensor_prefix(bytes)?;
    if used != bytes.len() {
        return Err(format_err("trailing bytes after payload"));
    }
    Ok(t)
}

/// Decode one tensor from the front of `bytes`, returning the bytes consumed.
pub fn decode_tensor_prefix<E: Element>(bytes: &[u8]) -> Result<(Tensor<E>, usize)> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let dtype = cur.u8()?;
    if dtype != E::DTYPE_CODE {
        return Err(format_err(format!(
            "dtype code {dtype} does not match requested element type ({})",
            E::DTYPE_CODE
        )));
    }
    let rank = cur.u8()?;
    if rank == 0 || rank > MAX_RANK {
        return Err(format_err(format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel: usize = 1;
    for _ in 0..rank {
        let e = cur.u64()?;
        if e == 0 {
            return Err(format_err("zero extent"));
        }
        let e: usize = e
            .try_into()
            .map_err(|_| format_err("extent exceeds platform size"))?;
        numel = numel
            .checked_mul(e)
            .ok_or_else(|| format_err("element count overflow"))?;
        shape.push(e);
    }
    let elem_size = match dtype {
        1 => 4,
        2 => 8,
        other => return Err(format_err(format!("unknown dtype code {other}"))),
    };
    let payload_len = numel
        .checked_mul(elem_size)
        .ok_or_else(|| format_err("payload length overflow"))?;
    if cur.remaining() < payload_len {
        return Err(format_err("payload shorter than the declared shape"));
    }
    let payload = cur.take(payload_len)?;
    let mut data = Vec::with_capacity(numel);
    match dtype {
        1 => {
            for chunk in payload.chunks_exact(4) {
                data.push(E::from_f64(f32::from_le_bytes(chunk.try_into().unwrap()) as f64));
            }
        }
        _ => {
            for chunk in payload.chunks_exact(8) {
                data.push(E::from_f64(f64::from_le_bytes(chunk.try_into().unwrap())));
            }
        }
    }
    Ok((Tensor::from_vec(&shape, data)?, cur.pos))
}

pub fn write_tensor<E: Element>(path: impl AsRef<Path>, t: &Tensor<E>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor<E: Element>(path: impl AsRef<Path>) -> Result<Tensor<E>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}
