//! File formats: MNIST IDX input, the `HCSC` checkpoint container, PGM
//! montages and the training metrics CSV.

pub mod checkpoint;
pub mod container;
pub mod idx;
pub mod metrics;
pub mod montage;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use container::{Blob, Container};
pub use idx::{load_idx_images, load_idx_labels, Dataset, Split};
pub use montage::{export_montage, Montage};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic number: expected {expected}, found {found}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("not an HCSC container (magic mismatch)")]
    ContainerMagic,
    #[error("unsupported container version {found} (this build reads {expected})")]
    Version { expected: u32, found: u32 },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    At {
        path: PathBuf,
        #[source]
        source: Box<DataError>,
    },
    #[error(transparent)]
    Model(#[from] hcsc_core::Error),
}

impl DataError {
    /// Attaches the file the error came from.
    pub fn at(self, path: &Path) -> DataError {
        match self {
            e @ (DataError::Io { .. } | DataError::At { .. }) => e,
            e => DataError::At {
                path: path.to_path_buf(),
                source: Box::new(e),
            },
        }
    }

    /// The error with any path context removed.
    pub fn root(&self) -> &DataError {
        match self {
            DataError::At { source, .. } => source.root(),
            e => e,
        }
    }

    /// Short machine-readable class used by the CLI.
    pub fn class(&self) -> &'static str {
        match self.root() {
            DataError::BadMagic { .. } => "bad-magic",
            DataError::Truncated { .. } => "truncated",
            DataError::DimMismatch(_) => "dim-mismatch",
            DataError::ContainerMagic => "magic-mismatch",
            DataError::Version { .. } => "version-mismatch",
            DataError::SizeMismatch(_) => "size-mismatch",
            DataError::Header(_) => "header",
            DataError::Io { .. } => "io",
            DataError::Model(_) => "model",
            DataError::At { .. } => unreachable!("root strips path context"),
        }
    }
}
