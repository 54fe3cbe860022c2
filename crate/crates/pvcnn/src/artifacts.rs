//! Checkpoint files and the names of a training run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use pvcnn_core::checkpoint::{decode, decode_as, encode, CheckpointError};
use pvcnn_core::{ArchId, Model};
use thiserror::Error;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Error)]
pub enum CheckpointFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        source: CheckpointError,
    },
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), CheckpointFileError> {
    fs::write(path, encode(model)).map_err(|source| CheckpointFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a checkpoint, optionally insisting on its architecture.
pub fn load_checkpoint(path: &Path, expected: Option<ArchId>) -> Result<Model, CheckpointFileError> {
    let bytes = fs::read(path).map_err(|source| CheckpointFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let decoded = match expected {
        Some(arch) => decode_as(&bytes, arch),
        None => decode(&bytes),
    };
    decoded.map_err(|source| CheckpointFileError::Format {
        path: path.to_path_buf(),
        source,
    })
}
