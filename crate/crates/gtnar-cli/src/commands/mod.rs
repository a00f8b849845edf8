//! Subcommand implementations.

pub mod benchmark;
pub mod fit;
pub mod generate;
pub mod metrics;
pub mod select;

use std::fs;
use std::path::{Path, PathBuf};

use gtnar::error::{Error, Result};

/// Resolves the output directory from the flag, then the config field
/// (relative to the config file), and creates it.
pub(crate) fn output_dir(flag: Option<&Path>, fallback: Option<PathBuf>) -> Result<PathBuf> {
    let dir = match (flag, fallback) {
        (Some(dir), _) => dir.to_path_buf(),
        (None, Some(dir)) => dir,
        (None, None) => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)
        .map_err(|e| Error::Validation(format!("cannot create {}: {}", dir.display(), e)))?;
    Ok(dir)
}

/// Writes a JSON document into the output directory and logs the path.
pub(crate) fn emit_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
    let path = dir.join(name);
    gtnar::io::write_json(&path, value)?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

/// Writes a text file into the output directory and logs the path.
pub(crate) fn emit_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text)
        .map_err(|e| Error::Validation(format!("cannot write {}: {}", path.display(), e)))?;
    log::info!("wrote {}", path.display());
    Ok(path)
}
