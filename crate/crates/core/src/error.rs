use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sampling grid: {0}")]
    InvalidGrid(String),
    #[error("unknown modulation scheme `{0}`")]
    UnknownScheme(String),
    #[error("invalid waveform: {0}")]
    Waveform(String),
    #[error("band {0} appears more than once in the scene")]
    DuplicateBand(usize),
    #[error("band index {band} out of range (n_band = {n_band})")]
    BandOutOfRange { band: usize, n_band: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("channel selection must keep at least one coset")]
    EmptyKeep,
    #[error("support of size {support} cannot be identified from {cosets} cosets")]
    Unidentifiable { support: usize, cosets: usize },
    #[error("symbol index {index} out of range for a {order}-point constellation")]
    SymbolOutOfRange { index: usize, order: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
