//! Recipe recommendation over heterogeneous information networks.
//!
//! The pipeline: [`graph`] stores and splits a typed recipe network,
//! [`metapath`] counts metapath instances and builds PathSim similarity
//! graphs, [`model`] runs heterogeneous graph attention over both on the
//! [`tensor`] autodiff tape, [`train`] fits it with a margin ranking loss and
//! [`eval`] ranks held-out links against sampled negatives.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod metapath;
pub mod model;
pub mod sparse;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
