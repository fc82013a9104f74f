use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("solver diverged at iteration {iteration} (step size {step})")]
    Divergence { iteration: usize, step: f64 },
    #[error("degenerate atom: code channel {channel} has zero norm")]
    DegenerateAtom { channel: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("layer {layer}: {source}")]
    Layer { layer: usize, source: Box<Error> },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_layer(self, layer: usize) -> Self {
        Error::Layer {
            layer,
            source: Box::new(self),
        }
    }

    /// Short machine-readable name of the root error.
    pub fn class(&self) -> &'static str {
        match self.root() {
            Error::Shape(_) => "shape",
            Error::Argument(_) => "argument",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::DegenerateAtom { .. } => "degenerate-atom",
            Error::EmptyBatch => "empty-batch",
            Error::Label { .. } => "label",
            Error::Layer { .. } | Error::Training { .. } => unreachable!("root strips context"),
        }
    }

    /// Strips layer/training context and returns the innermost error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layer { source, .. } | Error::Training { source, .. } => source.root(),
            e => e,
        }
    }
}
