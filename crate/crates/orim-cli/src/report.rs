//! Shared report and filesystem plumbing for the subcommands.

use crate::{CliError, CliResult};
use std::path::Path;

pub const SCHEMA: &str = "orim/1";

pub fn io_err(path: &Path, e: &std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Fail early with the offending path when an input file is absent.
pub fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io {
            path: path.display().to_string(),
            message: "no such file".into(),
        })
    }
}

pub fn require_dir(path: &Path) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Io {
            path: path.display().to_string(),
            message: "no such directory".into(),
        })
    }
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, &e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, &e))
}

/// Pretty JSON plus trailing newline, to `path` or stdout.
pub fn emit_json(path: Option<&Path>, value: &serde_json::Value) -> CliResult<()> {
    let text = format!("{:#}\n", value);
    match path {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Map a core error on a known path: I/O keeps the path (exit 2), anything
/// else is a validation problem with the file contents (exit 1).
pub fn core_err_at(path: &Path, e: orim_core::OrimError) -> CliError {
    match e {
        orim_core::OrimError::Io(io) => io_err(path, &io),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    }
}

pub fn gcnn_err_at(path: &Path, e: orim_gcnn::GcnnError) -> CliError {
    match e {
        orim_gcnn::GcnnError::Io(io) => io_err(path, &io),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    }
}
