//! Deterministic discrete-event simulator of a three-layer digital-twin
//! network: terminals with local twins, edge servers pooling per-terminal
//! agents, and a cloud twin.
//!
//! Two deployments can be compared on one scenario: a centralized one that
//! ships raw data to the cloud, and a multi-layer one that serves demands
//! at the lowest capable layer and migrates agents on handover.

pub mod calibrate;
pub mod config;
pub mod demand;
pub mod dt;
pub mod kernel;
pub mod metrics;
pub mod mobility;
pub mod net;
pub mod policy;
pub mod sim;

pub use config::ScenarioConfig;
pub use kernel::SimTime;
pub use policy::DeploymentMode;
pub use sim::{RunOutput, Simulation};
