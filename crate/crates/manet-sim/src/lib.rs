//! Discrete-event simulator for gossip routing protocols in mobile ad hoc
//! networks, with a simplified IEEE 802.11 power-save MAC, random-waypoint
//! mobility, CBR and reliable-windowed traffic sources, and a scenario
//! harness that sweeps simulation time and node count.

pub mod config;
pub mod engine;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod radio;
pub mod routing;
pub mod scenario;
pub mod stats;
pub mod traffic;

pub use config::ScenarioConfig;
pub use engine::{Engine, SimTime};
pub use metrics::MetricsRow;
pub use scenario::{run_one, RunReport};
