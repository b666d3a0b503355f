//! Report serialization helpers. All writes go through a temp file and
//! rename so a crashed run never leaves a partial report behind.

use serde::Serialize;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("serialize: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn toml_string<T: Serialize>(value: &T) -> Result<String, ReportError> {
    Ok(toml::to_string_pretty(value)?)
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let text = toml_string(value)?;
    write_atomic(path, text.as_bytes()).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}
