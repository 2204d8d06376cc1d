//! Error type shared by all core modules.

use alloc::string::String;
use core::fmt;

/// Every fallible core operation reports one of these categories.
/// Shape problems are always reported, never silently broadcast away.
#[derive(Debug, Clone, PartialEq)]
pub enum GlyceError {
    /// Tensor shapes incompatible with the requested operation.
    Shape(String),
    /// Invalid configuration value (dimensions, group counts, ranges).
    Config(String),
    /// Out-of-range id or index (char ids, label ids, vocab ids).
    Index(String),
    /// API contract violated (non-scalar loss, mismatched lengths).
    Contract(String),
    /// Non-finite value where a finite one is required.
    Numeric(String),
    /// Malformed serialized data (labels, corpora) seen by core code.
    Data(String),
}

impl fmt::Display for GlyceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GlyceError::Shape(m) => write!(f, "shape error: {m}"),
            GlyceError::Config(m) => write!(f, "config error: {m}"),
            GlyceError::Index(m) => write!(f, "index error: {m}"),
            GlyceError::Contract(m) => write!(f, "contract error: {m}"),
            GlyceError::Numeric(m) => write!(f, "numeric error: {m}"),
            GlyceError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GlyceError {}

pub type Result<T> = core::result::Result<T, GlyceError>;
