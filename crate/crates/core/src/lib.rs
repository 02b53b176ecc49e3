//! Depth-semantics symbiosis toolkit.
//!
//! A small reverse-mode tensor library and, built on it, the pieces of a
//! joint depth/semantics network: window and grid partitions, local-global
//! cross-attention, the symbiotic transformer, a toy encoder-decoder, the
//! NearFarMix depth-aware augmentation, losses, metrics and file formats.

pub mod attention;
pub mod augment;
pub mod data_io;
pub mod error;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod partition;
pub mod tensor;

pub use error::{Error, Result};
