//! Gradual domain adaptation by self-training over selected intermediate domains.
//!
//! A source classifier is warm-started through `M` intermediate domains. Each
//! one mixes the most confident target samples (labeled by the previous model,
//! optionally enhanced by clustering and label propagation) with the source
//! samples closest to the target class prototypes. The target share grows and
//! the source share shrinks from stage to stage.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod seeds;
pub mod selection;

pub use error::{Error, Result};
