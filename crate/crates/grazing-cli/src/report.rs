//! Report emission: CSV tables and JSON summaries written atomically
//! (temporary file in the target directory, then rename).

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

/// One row of a check table; `anchor` names the property being checked.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub anchor: &'static str,
    pub check: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRow {
    pub fn new(anchor: &'static str, check: impl Into<String>, value: f64, tolerance: f64, pass: bool) -> Self {
        Self { anchor, check: check.into(), value, tolerance, pass }
    }
}

/// Output directory handle.
pub struct Reporter {
    dir: PathBuf,
}

impl Reporter {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `bytes` to `name` via a temporary file and an atomic rename.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let target = self.path(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target).map_err(|e| CliError::Io(e.error))?;
        Ok(target)
    }

    /// Serialises `rows` as RFC 4180 CSV with a header line.
    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf, CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
        self.write(name, &bytes)
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

/// Summary of a list of check rows.
#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub total: usize,
    pub failed: usize,
    pub failures: Vec<String>,
}

impl CheckSummary {
    pub fn of(rows: &[CheckRow]) -> Self {
        let failures: Vec<String> = rows.iter().filter(|r| !r.pass).map(|r| format!("{}: {}", r.anchor, r.check)).collect();
        Self { total: rows.len(), failed: failures.len(), failures }
    }
}
