//! Small filesystem helpers shared by the writers.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use spi_core::bcnn::{checkpoint, NetworkWeights};

use crate::{Error, Result};

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io { path: path.to_owned(), source })
}

/// Writes `bytes`, creating parent directories.
pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| Error::Io { path: parent.to_owned(), source })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_owned(), source })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(path: &Path, weights: &NetworkWeights<f32>) -> Result<()> {
    write(path, &checkpoint::encode(weights)?)
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkWeights<f32>> {
    Ok(checkpoint::decode(&read(path)?)?)
}
