//! Core library for glyph-image character embeddings.
//!
//! Everything in here is pure computation over in-memory data: a small
//! reverse-mode autodiff engine, synthetic glyph atlases, the tianzige
//! CNN glyph encoder, a contextual transformer encoder with glyph fusion,
//! CRF and classification heads, a deterministic trainer, span metrics,
//! and synthetic corpus generators. File formats and the command line
//! live in the companion `glyce-cli` crate.
//!
//! The crate is `no_std` + `alloc` compatible; the `std` feature (on by
//! default) only adds `std::error::Error` for [`GlyceError`].

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod atlas;
pub mod cnn;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod heads;
pub mod math;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod params;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{GlyceError, Result};
pub use graph::{Graph, NodeId};
pub use params::{ParamGroup, ParamId, ParamSet};
pub use tensor::Tensor;
