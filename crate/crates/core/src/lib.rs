//! Budget-aware video classification with learned clip samplers.
//!
//! Lightweight saliency scorers rank the clips of a video, the top-K are
//! handed to a clip classifier, and the harness compares accuracy and
//! compute against blind and oracle baselines.

pub mod checkpoint;
pub mod cli;
pub mod classifier;

pub mod datamodel;
pub mod error;
pub mod evalharness;
pub mod fusion;
pub mod saliency;
pub mod seed;
pub mod selection;
pub mod synthgen;
pub mod training;

pub use error::{Error, ErrorKind, Result};
