//! Small convolutional Q-network engine: forward pass, hand-written backward
//! pass, Adam, and a checksummed checkpoint format.

mod adam;
pub mod checkpoint;
pub mod layers;
mod net;
mod tensor;

use thiserror::Error;

pub use adam::AdamState;
pub use net::{ForwardCache, Gradients, NetSpec, PolicyNet};
pub use tensor::Tensor;

use crate::scalar::DType;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("non-finite gradient; optimizer step skipped")]
    NonFiniteGradient,
    #[error("checkpoint checksum mismatch (truncated or corrupt file)")]
    Checksum,
    #[error("not a weight checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint dtype mismatch: expected {expected:?}, found {found:?}")]
    DTypeMismatch { expected: DType, found: DType },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
