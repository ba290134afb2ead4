//! Deterministic discrete-event simulator for vehicular ad-hoc routing.
//!
//! Vehicles drive on a synthetic road grid and carry LOCO addresses (road,
//! lane, position). The ACR protocol clusters vehicles whose road and lane
//! bits have zero Hamming distance and routes proactively inside clusters
//! and reactively between cluster heads. Simplified AODV and DSDV serve as
//! baselines. The [`harness`] module runs repeated experiments and reports
//! reachability, end-to-end delay and total traffic received.

pub mod cluster;
pub mod harness;
pub mod loco;
pub mod mobility;
pub mod netsim;
pub mod protocols;
pub mod rng;
pub mod world;

pub use cluster::NodeId;
pub use protocols::ProtocolKind;
