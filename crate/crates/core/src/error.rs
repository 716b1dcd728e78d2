use autodiff::TensorError;
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::csv_load::IngestError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid episode: {0}")]
    Episode(String),
    #[error("permutation error: {0}")]
    Permutation(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("attention over datapoints needs at least one training row")]
    EmptyContext,
    #[error("codebook error: {0}")]
    Codebook(String),
    #[error("exhaustive symmetrization over {q}! permutations exceeds the cap of q <= {max}; pass the override to force it")]
    CostGuard { q: usize, max: usize },
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
