//! Simulator for compressed-sensing based flooding in lattice sensor
//! networks.
//!
//! Each measurement travels as a ±1 multiple of a signature sequence that
//! encodes its origin node and hop count. Nodes decode the superposition of
//! everything their neighbours transmit with ISTA, drop copies they have
//! already forwarded, and re-superimpose the rest with the hop count
//! incremented. The sink accumulates votes and reports a ±1/0 estimate per
//! node at the end of a session.

pub mod error;
pub mod experiment;
pub mod metrics;
pub mod network;
pub mod protocol;
pub mod seed;
pub mod sensing;
pub mod solver;

pub use error::{Error, Result};
pub use metrics::{
    overhead_cdma, overhead_conventional, overhead_proposed, reconstruction_error, summarize,
    ExperimentSummary, OverheadModel,
};
pub use network::{
    run_session, run_session_traced, ChannelModel, LatticeTopology, SessionConfig, SessionResult,
};
pub use protocol::{decode_received, NodeState, Packet, SinkState};
pub use sensing::{generate_signatures, SensingParams, SignatureMatrix};
pub use solver::{
    brute_force_p0, ista_solve, objective, quantize_support, soft_threshold, DecodedMeasurement,
    IstaConfig, SparseSignal, StepSize,
};
