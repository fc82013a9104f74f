//! IDX files as distributed with MNIST: a big-endian magic number
//! (`0x0000_08NN`, where `08` marks unsigned bytes and `NN` the number of
//! dimensions), one big-endian `u32` per dimension, then the raw bytes.

use std::fs;
use std::path::{Path, PathBuf};

use hcsc_core::SignalTensor;

use super::DataError;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Validates the header and returns `(dims, payload)`.
fn parse_header(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8]), DataError> {
    let found = read_u32(bytes, 0).ok_or(DataError::Truncated {
        expected: 4,
        actual: bytes.len(),
    })?;
    if found != magic {
        return Err(DataError::BadMagic { expected: magic, found });
    }
    let ndims = (magic & 0xff) as usize;
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(DataError::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|d| read_u32(bytes, 4 + 4 * d).expect("length checked") as usize)
        .collect();
    let payload_len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| DataError::DimMismatch(format!("dimensions {dims:?} overflow")))?;
    let expected = header_len
        .checked_add(payload_len)
        .ok_or_else(|| DataError::DimMismatch(format!("dimensions {dims:?} overflow")))?;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DataError::DimMismatch(format!(
            "dimensions {dims:?} describe {expected} bytes but the file has {}",
            bytes.len()
        )));
    }
    Ok((dims, &bytes[header_len..]))
}

/// Parses an image file into `1 x rows x cols` tensors with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<SignalTensor>, DataError> {
    let (dims, payload) = parse_header(bytes, IMAGE_MAGIC)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    if n > 0 && (rows == 0 || cols == 0) {
        return Err(DataError::DimMismatch(format!("empty {rows}x{cols} images")));
    }
    let plane = rows * cols;
    Ok((0..n)
        .map(|i| {
            let px = &payload[i * plane..(i + 1) * plane];
            let data = px.iter().map(|&p| p as f32 / 255.0).collect();
            SignalTensor::from_vec(1, rows, cols, data).expect("sized from header")
        })
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let (_, payload) = parse_header(bytes, LABEL_MAGIC)?;
    Ok(payload.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<SignalTensor>, DataError> {
    let path = path.as_ref();
    parse_idx_images(&read(path)?).map_err(|e| e.at(path))
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>, DataError> {
    let path = path.as_ref();
    parse_idx_labels(&read(path)?).map_err(|e| e.at(path))
}

/// Serializes images back to IDX bytes (pixels rounded from `[0, 1]`).
pub fn encode_idx_images(images: &[SignalTensor]) -> Vec<u8> {
    let (rows, cols) = images.first().map_or((0, 0), |t| (t.height(), t.width()));
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [images.len(), rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for img in images {
        out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Labeled images of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<SignalTensor>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn from_files(images: &Path, labels: &Path, split: Split) -> Result<Self, DataError> {
        let images = load_idx_images(images)?;
        let labels = load_idx_labels(labels)?;
        if images.len() != labels.len() {
            return Err(DataError::DimMismatch(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Dataset { images, labels, split })
    }

    /// Loads the standard MNIST file pair for `split` from `dir`. Plain and
    /// `.`-separated (`train-images.idx3-ubyte`) names are both accepted.
    pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<Self, DataError> {
        let dir = dir.as_ref();
        let (img, lab) = split.file_names();
        let pick = |name: &str| -> PathBuf {
            let plain = dir.join(name);
            if plain.exists() {
                return plain;
            }
            let dotted = dir.join(name.replacen("-idx", ".idx", 1));
            if dotted.exists() {
                dotted
            } else {
                plain
            }
        };
        Self::from_files(&pick(img), &pick(lab), split)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Keeps the first `n` examples.
    pub fn truncate(&mut self, n: usize) {
        self.images.truncate(n);
        self.labels.truncate(n);
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }
}
