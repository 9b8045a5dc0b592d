//! Deterministic discrete-event simulator for small wireless VPN
//! topologies with bandwidth-provisioned paths.
//!
//! The crate has three layers:
//!
//! * provisioning: [`hose`] computes the worst-case load each link can
//!   see under per-endpoint traffic bounds and the minimal per-link
//!   reservations, via an exact rational solver;
//! * routing: [`aodv`] is an on-demand distance-vector state machine
//!   (route request flooding, sequence-numbered replies, error
//!   propagation on link breaks), and [`policy`] picks among
//!   provisioned candidate paths by allocated bandwidth;
//! * execution: [`engine`] runs constant-rate flows over finite-speed
//!   FIFO links with failure injection and energy accounting, while
//!   [`metrics`] keeps a packet-conservation ledger and produces
//!   summary tables and time series.
//!
//! [`scenario`] reads TOML descriptions of all of the above and
//! [`runner`] executes them across seeds and writes CSV output. The
//! whole stack is deterministic: same scenario, same seed, same bytes.

pub mod aodv;
pub mod engine;
pub mod hose;
pub mod metrics;
pub mod policy;
pub mod runner;
pub mod scenario;
pub mod time;
pub mod topology;

pub use engine::{FailureEvent, FlowSpec, RunResult, SimConfig, Simulation};
pub use hose::{minimal_reservation, worst_case_link_load, HoseSpec, RoutingFractions};
pub use metrics::{MetricsReport, RunSet};
pub use policy::{policy_by_name, policy_names, PathPolicy, PathTable};
pub use scenario::Scenario;
pub use time::{SimDuration, SimTime};
pub use topology::{LinkKey, NodeId, Topology};
