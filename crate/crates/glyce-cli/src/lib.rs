//! IO companion to `glyce-core`: binary atlas and checkpoint containers,
//! text corpus and embedding formats, flat run configuration, JSON run
//! records, and the subcommands that wire them to the core pipeline.
//!
//! The core crate computes; this crate touches files and the process
//! boundary (flags, env, exit codes) and nothing else.

pub mod atlas_file;
pub mod bytes;
pub mod checkpoint_file;
pub mod commands;
pub mod corpus_file;
pub mod embed_file;
pub mod error;
pub mod records;
pub mod runconfig;

pub use error::{CliError, CliResult};
