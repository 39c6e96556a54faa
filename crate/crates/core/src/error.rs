//! Error type shared across the engine.

use crate::digest::Digest;
use crate::path::FsPath;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("path not found: {0}")]
    NotFound(FsPath),

    #[error("is a directory: {0}")]
    IsDirectory(FsPath),

    #[error("not a directory: {0}")]
    NotADirectory(FsPath),

    #[error("too many levels of symbolic links resolving {0}")]
    TooManyLinks(FsPath),

    #[error("invalid path {path:?}: {reason}")]
    InvalidPath { path: String, reason: String },

    #[error("missing blob {0}")]
    MissingBlob(Digest),

    #[error("corrupt blob: expected {expected}, file hashes to {actual}")]
    CorruptBlob { expected: Digest, actual: Digest },

    #[error("bad manifest: {0}")]
    BadManifest(String),

    #[error("bad trace at line {line}: {reason}")]
    BadTrace { line: usize, reason: String },

    #[error("container {0} is already converted")]
    AlreadyConverted(String),

    #[error("base depth {base_depth} not valid for an image with {layer_count} layers")]
    InvalidBaseDepth {
        base_depth: usize,
        layer_count: usize,
    },

    #[error("container {0} has not been converted; nothing to export")]
    ExportBeforeConvert(String),

    #[error("analysis failed: {0}")]
    AnalysisFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
