//! Crate-wide error type.

use thiserror::Error;

/// Resource kind that violated a per-core hard limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResourceKind {
    Neurons,
    InputAxons,
    OutputAxons,
    Synapses,
}

impl std::fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ResourceKind::Neurons => "neurons",
            ResourceKind::InputAxons => "input axons",
            ResourceKind::OutputAxons => "output axons",
            ResourceKind::Synapses => "synapses",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("weight blob error: {0}")]
    Blob(String),

    #[error("unsupported layer kind for this operation: {0}")]
    UnsupportedKind(String),

    #[error("partition does not tile the layer: {0}")]
    Partition(String),

    #[error("no feasible partition for layer {layer}: {reason}")]
    NoFeasiblePartition { layer: String, reason: String },

    #[error("network infeasible: all candidates violate hard constraints at layer {layer}")]
    InfeasibleNetwork { layer: String },

    #[error("capacity exceeded: {needed} cores requested but only {available} available")]
    Capacity { needed: u64, available: u64 },

    #[error("mapping error: {0}")]
    Map(String),

    #[error("image integrity error: {0}")]
    Integrity(String),

    #[error("image format version mismatch: found {found}, expected {expected}")]
    Version { found: String, expected: String },

    #[error("degenerate weights: normalization scale is zero")]
    DegenerateWeights,

    #[error("calibration batch is empty")]
    EmptyCalibration,

    #[error("dead layer during calibration: {0} never receives positive drive")]
    DeadLayer(String),

    #[error("value out of representable range: {0}")]
    Range(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
