//! IDX digit files (the MNIST distribution format).

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// `[N, rows, cols]` u8 images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn parse_err<T>(offset: usize, detail: impl Into<String>) -> Result<T> {
    Err(Error::Parse { offset, detail: detail.into() })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> Result<u32> {
        match self.bytes.get(self.pos..self.pos + 4) {
            Some(b) => {
                self.pos += 4;
                Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            }
            None => parse_err(self.pos, "truncated header"),
        }
    }

    fn payload(&mut self, len: usize) -> Result<&[u8]> {
        let have = self.bytes.len() - self.pos;
        if have < len {
            return parse_err(self.bytes.len(), format!("truncated payload: need {len} bytes after offset {}, have {have}", self.pos));
        }
        if have > len {
            return parse_err(self.pos + len, format!("{} trailing bytes", have - len));
        }
        Ok(&self.bytes[self.pos..])
    }
}

fn header(r: &mut Reader<'_>, magic: u32) -> Result<Vec<usize>> {
    let got = r.u32()?;
    if got != magic {
        return parse_err(0, format!("bad magic {got:#010x}, expected {magic:#010x}"));
    }
    let dims = (magic & 0xff) as usize;
    (0..dims).map(|_| r.u32().map(|d| d as usize)).collect()
}

/// Parses an unsigned-byte image file (magic `0x00000803`).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxImages> {
    let mut r = Reader { bytes, pos: 0 };
    let dims = header(&mut r, IMAGE_MAGIC)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = r.payload(count * rows * cols)?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

/// Parses a label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, pos: 0 };
    let dims = header(&mut r, LABEL_MAGIC)?;
    Ok(r.payload(dims[0])?.to_vec())
}

/// Serializes images back to IDX bytes.
pub fn write_idx(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC as usize, images.count, images.rows, images.cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}
