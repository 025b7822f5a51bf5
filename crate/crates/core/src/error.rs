// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the toolkit.

use crate::corpus::{Dimension, Leaning, Split};

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // -- numeric kernels --
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("matrix is rank deficient: all centered rows are zero")]
    RankDeficient,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // -- corpus --
    #[error("parse error at row {row}: {reason}")]
    Parse { row: usize, reason: String },
    #[error("statement file is empty")]
    EmptyFile,
    #[error("unknown chat wrapper `{0}`")]
    UnknownWrapper(String),
    #[error("too few statements to split stratum ({dimension}, {leaning})")]
    TooFewStatements { dimension: Dimension, leaning: Leaning },

    // -- toy model --
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence too long: {len} tokens exceeds max_seq {max}{}", .statement.map(|i| format!(" (statement {i})")).unwrap_or_default())]
    SequenceTooLong {
        len: usize,
        max: usize,
        statement: Option<usize>,
    },

    // -- activation store / container --
    #[error("invalid plant spec: {0}")]
    InvalidSpec(String),
    #[error("bad magic: not an ACTV file")]
    BadMagic,
    #[error("unsupported ACTV version {0}")]
    VersionUnsupported(u16),
    #[error("file truncated: needed {needed} bytes, found {found}")]
    TruncatedFile { needed: u64, found: u64 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed container: {0}")]
    Format(String),

    // -- learners --
    #[error("missing class {leaning} for {axis} at layer {layer}")]
    MissingClass {
        axis: String,
        layer: usize,
        leaning: Leaning,
    },
    #[error("degenerate concept vector (norm {0:e})")]
    DegenerateVector(f64),
    #[error("probe did not converge after {iterations} iterations (gradient {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },
    #[error("need at least {needed} contrastive pairs, found {found}")]
    TooFewPairs { needed: usize, found: usize },

    // -- evaluation / steering --
    #[error("no records in split `{0}`")]
    EmptySplit(Split),
    #[error("missing vectors: {}", .0.join(", "))]
    MissingVectors(Vec<String>),
    #[error("layer {layer} out of range 1..={n_layers}")]
    LayerOutOfRange { layer: usize, n_layers: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
