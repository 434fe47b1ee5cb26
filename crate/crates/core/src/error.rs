//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum TrinityError {
    /// Tensor/operation contract broken by incompatible shapes.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration (dimensions, toggles, CLI arguments).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input is structurally valid but degenerate for the operation
    /// (e.g. a contrastive batch without negatives).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// On-disk artifact is malformed.
    #[error("format error in {path}: {detail} (byte offset {offset})")]
    Format {
        path: PathBuf,
        detail: String,
        offset: u64,
    },

    /// A required artifact is missing; names the command that produces it.
    #[error("missing artifact {path}: run `{produced_by}` first")]
    MissingArtifact { path: PathBuf, produced_by: String },

    /// Optimizer stepped without a fresh backward pass.
    #[error("stale gradients: optimizer step without a preceding backward pass")]
    StaleGradient,

    /// Metric is undefined for the given inputs (e.g. single-class labels).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TrinityError {
    /// Process exit code family: 2 = configuration, 3 = data/format,
    /// 4 = contract violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            TrinityError::Config(_) | TrinityError::MissingArtifact { .. } => 2,
            TrinityError::Format { .. } | TrinityError::Io(_) | TrinityError::UndefinedMetric(_) => {
                3
            }
            TrinityError::ShapeMismatch { .. }
            | TrinityError::Contract(_)
            | TrinityError::Degenerate(_)
            | TrinityError::StaleGradient => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, TrinityError>;
