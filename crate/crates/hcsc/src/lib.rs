//! MNIST ingestion, checkpoints, montage export and the `hcsc` command-line
//! pipelines around [`hcsc_core`].

pub mod cli;
pub mod dataio;
pub mod pipeline;

pub use hcsc_core;
