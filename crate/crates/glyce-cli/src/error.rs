//! CLI failure categories, each with its own process exit code.

use std::fmt;
use std::io::Read;
use std::path::Path;

use glyce_core::GlyceError;

/// What went wrong, coarsely. The exit codes are part of the interface:
/// scripts key on them to tell a bad flag from a bad file.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unknown config keys, unparsable config values.
    Usage(String),
    /// The operating system failed us: missing file, unwritable path.
    Io { path: String, message: String },
    /// A file exists but its bytes are not valid in its format.
    Format { path: String, message: String },
    /// Inputs are individually valid but disagree with each other
    /// (atlas vs corpus vs checkpoint vs config).
    Mismatch(String),
    /// The computation itself failed on valid inputs.
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Format { .. } => 4,
            CliError::Mismatch(_) => 5,
            CliError::Compute(_) => 6,
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> CliError {
        CliError::Format { path: path.display().to_string(), message: message.into() }
    }

    pub fn io(path: &Path, err: std::io::Error) -> CliError {
        CliError::Io { path: path.display().to_string(), message: err.to_string() }
    }
}

/// The Display text is the one-line diagnostic printed to stderr.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io { path, message } => write!(f, "io error: {path}: {message}"),
            CliError::Format { path, message } => write!(f, "format error: {path}: {message}"),
            CliError::Mismatch(m) => write!(f, "mismatch error: {m}"),
            CliError::Compute(m) => write!(f, "compute error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<GlyceError> for CliError {
    fn from(e: GlyceError) -> CliError {
        match e {
            GlyceError::Config(m) => CliError::Usage(m),
            other => CliError::Compute(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Whole-file read with the path attached to any failure.
pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| CliError::io(path, e))?;
    Ok(buf)
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
