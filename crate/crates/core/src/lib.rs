//! Neurofab compiles feed-forward spiking networks onto a simulated
//! many-core neuromorphic resource model and executes them in discrete time.
//!
//! The pipeline: load a model manifest and weight blob ([`model`]), lower
//! pools and convert parameters to integers ([`quant`]), search layer
//! partitions under hard per-core limits ([`partition`]) using the
//! connectivity geometry ([`connectivity`]), place and serialize the result
//! as a deployment image ([`mapping`]), and run it ([`sim`]) — either as an
//! abstract reference over the network description or as a mapped execution
//! over the image, which must produce bit-identical spike trains.

pub mod connectivity;
pub mod error;
pub mod mapping;
pub mod model;
pub mod partition;
pub mod quant;
pub mod sim;

pub use error::{Error, Result};
