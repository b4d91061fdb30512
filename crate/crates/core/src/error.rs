//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by simulation, storage and forensics operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or dataset had a different length than the operation expects.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// A configuration value is out of its documented range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Checkpoint rounds must be appended in strictly increasing order.
    #[error("checkpoint round {got} not after last stored round {last}")]
    OutOfOrderRound { last: u64, got: u64 },

    /// The requested round is not present in the checkpoint index.
    #[error("round {0} not found in checkpoint index")]
    MissingRound(u64),

    /// A stored record failed its CRC32 check.
    #[error("checksum mismatch for round {round}: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { round: u64, stored: u32, computed: u32 },

    /// A file did not parse as the format it claims to be.
    #[error("malformed {kind} file: {detail}")]
    Malformed { kind: &'static str, detail: String },

    /// The trigger patch does not fit inside the input grid.
    #[error("trigger of size {size} does not fit a {h}x{w} grid")]
    TriggerOutOfBounds { size: usize, h: usize, w: usize },

    /// Probe pairs must share a label.
    #[error("probe label mismatch: target has {target}, non-target has {nontarget}")]
    ProbeLabelMismatch { target: usize, nontarget: usize },

    /// The pipeline needed a misclassified target input but the attack never
    /// produced one.
    #[error("no misclassified target input found (attack not effective)")]
    NoTargetProbe,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
