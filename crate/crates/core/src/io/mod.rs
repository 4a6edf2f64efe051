//! File formats: PFM float rasters, PNG images, and plain-text records for
//! matches, rectifications, offset histograms and reports.

mod pfm;
mod png;
mod text;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use pfm::*;
pub use png::*;
pub use text::*;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed PFM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image: {0}")]
    Image(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        IoError::Parse {
            line,
            message: message.into(),
        }
    }
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; each entry carries its 1-based line number.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>, IoError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| IoError::parse(i + 1, format!("expected `key = value`, got {line:?}")))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}
