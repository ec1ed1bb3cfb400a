//! STDS1: one JSON header line, a newline, then a raw little-endian payload.

use std::path::Path;

use cuboidcast_tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &str = "STDS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    /// Bytes read back as `value / 255`.
    #[serde(rename = "u8")]
    U8,
    #[serde(rename = "f32le")]
    F32,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub magic: String,
    pub dtype: Dtype,
    /// `[N, T + K, H, W, 1]`.
    pub shape: [usize; 5],
    pub input_len: usize,
    pub seed: u64,
    pub config: serde_json::Value,
}

/// Sequences of single-channel frames with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub header: DatasetHeader,
    payload: Vec<u8>,
}

fn parse_err<T>(offset: usize, detail: impl Into<String>) -> Result<T> {
    Err(Error::Parse { offset, detail: detail.into() })
}

impl SequenceDataset {
    pub fn new(header: DatasetHeader, payload: Vec<u8>) -> Result<Self> {
        let [n, f, h, w, c] = header.shape;
        if header.magic != MAGIC {
            return parse_err(0, format!("bad magic {:?}", header.magic));
        }
        if c != 1 || header.input_len == 0 || header.input_len >= f {
            return parse_err(0, format!("bad shape {:?} for input length {}", header.shape, header.input_len));
        }
        let want = n * f * h * w * header.dtype.width();
        if payload.len() != want {
            return parse_err(0, format!("payload has {} bytes, shape {:?} needs {want}", payload.len(), header.shape));
        }
        Ok(Self { header, payload })
    }

    pub fn len(&self) -> usize {
        self.header.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frames(&self) -> usize {
        self.header.shape[1]
    }

    pub fn input_len(&self) -> usize {
        self.header.input_len
    }

    pub fn target_len(&self) -> usize {
        self.frames() - self.input_len()
    }

    pub fn height(&self) -> usize {
        self.header.shape[2]
    }

    pub fn width(&self) -> usize {
        self.header.shape[3]
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    fn sample_len(&self) -> usize {
        self.frames() * self.height() * self.width()
    }

    /// Frame values of sample `i`, `[T + K, H, W]` flattened.
    pub fn sequence(&self, i: usize) -> Vec<f32> {
        let n = self.sample_len();
        let w = self.header.dtype.width();
        let bytes = &self.payload[i * n * w..(i + 1) * n * w];
        match self.header.dtype {
            Dtype::U8 => bytes.iter().map(|&b| b as f32 / 255.0).collect(),
            Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        }
    }

    /// Input and target tensors `[B, T, H, W, 1]` and `[B, K, H, W, 1]`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let (t, k, h, w) = (self.input_len(), self.target_len(), self.height(), self.width());
        let split = t * h * w;
        let mut x = Vec::with_capacity(indices.len() * split);
        let mut y = Vec::with_capacity(indices.len() * k * h * w);
        for &i in indices {
            let s = self.sequence(i);
            x.extend_from_slice(&s[..split]);
            y.extend_from_slice(&s[split..]);
        }
        let b = indices.len();
        (Tensor::new([b, t, h, w, 1], x).expect("sizes agree"), Tensor::new([b, k, h, w, 1], y).expect("sizes agree"))
    }

    /// Copy holding only the listed samples.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let n = self.sample_len() * self.header.dtype.width();
        let mut payload = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            payload.extend_from_slice(&self.payload[i * n..(i + 1) * n]);
        }
        let mut header = self.header.clone();
        header.shape[0] = indices.len();
        Self { header, payload }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let Some(nl) = bytes.iter().position(|&b| b == b'\n') else {
            return parse_err(bytes.len(), "missing header line");
        };
        let header: DatasetHeader = match serde_json::from_slice(&bytes[..nl]) {
            Ok(h) => h,
            Err(e) => return parse_err(e.column().saturating_sub(1), format!("header: {e}")),
        };
        if header.magic != MAGIC {
            return parse_err(0, format!("bad magic {:?}", header.magic));
        }
        // Remaining checks concern the payload, which starts after the newline.
        Self::new(header, bytes[nl + 1..].to_vec()).map_err(|e| match e {
            Error::Parse { detail, .. } => Error::Parse { offset: nl + 1, detail },
            e => e,
        })
    }

    /// Hex SHA-256 of the serialized file.
    pub fn checksum(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn write_dataset(path: &Path, data: &SequenceDataset) -> Result<()> {
    Ok(std::fs::write(path, data.to_bytes())?)
}

pub fn read_dataset(path: &Path) -> Result<SequenceDataset> {
    SequenceDataset::from_bytes(&std::fs::read(path)?)
}
