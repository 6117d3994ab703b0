//! Deterministic discrete-event simulation of blockgraph banks over an
//! asynchronous network, with scripted users and Byzantine banks.
//!
//! A run is a pure function of its [`Scenario`]: the same file and seed give
//! the same [`Trace`] byte for byte.

pub mod explore;
pub mod gen;
pub mod net;
pub mod scenario;
pub mod trace;
pub mod world;

pub use net::{run, run_prefix, Outcome, Simulator};
pub use scenario::{Behavior, DelayPolicy, Scenario, ScenarioError, SCENARIO_SCHEMA};
pub use trace::{Event, EventKind, Trace, TraceError, TRACE_SCHEMA};
pub use world::World;
