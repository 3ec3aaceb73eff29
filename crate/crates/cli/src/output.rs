//! CSV and JSON emission. Floats are written with 17 significant digits.

use std::fs;
use std::path::Path;

use serde::Serialize;
use shiftseq::io::fmt_f64;

use crate::error::CliError;

fn output_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| output_err(dir, e))
}

pub fn float(v: f64) -> String {
    fmt_f64(v)
}

/// Buffered table with a mandatory header.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| output_err(path, e))?;
        w.write_record(&self.header).map_err(|e| output_err(path, e))?;
        for row in &self.rows {
            w.write_record(row).map_err(|e| output_err(path, e))?;
        }
        w.flush().map_err(|e| output_err(path, e))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| output_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| output_err(path, e))
}
