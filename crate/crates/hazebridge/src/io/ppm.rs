//! Portable pixmap reader/writer. Images are exchanged as binary P6 (RGB)
//! with maxval 255; the reader additionally accepts P5 grayscale, which is
//! expanded to three channels. In-memory images are `[3, h, w]` tensors
//! with values in `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_DIM: usize = 1 << 16;

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "ppm image",
        reason: reason.into(),
    }
}

pub fn encode_ppm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = match img.shape() {
        &[c, h, w] if c == 1 || c == 3 => (c, h, w),
        _ => {
            return Err(Error::InvalidShape {
                op: "encode_ppm",
                shape: img.shape().to_vec(),
                reason: "expected [1|3, h, w]",
            })
        }
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = img.data();
    for p in 0..plane {
        for ch in 0..3 {
            let v = data[if c == 3 { ch * plane + p } else { p }];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

struct Scanner<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Scanner<'a> {
    /// Skip whitespace and `#` comments.
    fn skip_space(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
            if self.pos - start > 9 {
                return Err(format_err("header number too large"));
            }
        }
        if self.pos == start {
            return Err(format_err("expected a number in the header"));
        }
        let s = std::str::from_utf8(&self.buf[start..self.pos]).unwrap();
        s.parse().map_err(|_| format_err("bad header number"))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 2 {
        return Err(format_err("truncated header"));
    }
    let gray = match &bytes[..2] {
        b"P6" => false,
        b"P5" => true,
        _ => return Err(format_err("not a binary P5/P6 pixmap")),
    };
    let mut sc = Scanner { buf: bytes, pos: 2 };
    let w = sc.number()?;
    let h = sc.number()?;
    let maxval = sc.number()?;
    if w == 0 || h == 0 || w > MAX_DIM || h > MAX_DIM {
        return Err(format_err(format!("unsupported dimensions {w}x{h}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format_err(format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if sc.pos >= bytes.len() || !bytes[sc.pos].is_ascii_whitespace() {
        return Err(format_err("missing raster separator"));
    }
    sc.pos += 1;
    let plane = h
        .checked_mul(w)
        .ok_or_else(|| format_err("dimension overflow"))?;
    let samples = plane * if gray { 1 } else { 3 };
    let raster = &bytes[sc.pos..];
    if raster.len() != samples {
        return Err(format_err(format!(
            "raster has {} bytes, expected {samples}",
            raster.len()
        )));
    }
    let scale = 1.0 / maxval as f32;
    let mut data = vec![0.0f32; 3 * plane];
    if gray {
        for p in 0..plane {
            let v = raster[p] as f32 * scale;
            data[p] = v;
            data[plane + p] = v;
            data[2 * plane + p] = v;
        }
    } else {
        for p in 0..plane {
            for ch in 0..3 {
                data[ch * plane + p] = raster[3 * p + ch] as f32 * scale;
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)?).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}
