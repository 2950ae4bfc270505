//! Ordered consensus with equal opportunity.
//!
//! Commands are ordered by the median of `2f+1` node timestamps plus a
//! per-command noise drawn from a secret random oracle that only opens once
//! a slot has been decided. The crate bundles the oracle backends, a
//! geo-distributed latency model, an idealized slot-by-slot simulator with
//! baseline policies, adversarial timestamp strategies, exact bound analysis
//! and attack scenarios, plus an experiment harness.

pub mod adversary;
pub mod analysis;
pub mod attacks;
pub mod consensus;
pub mod domain;
pub mod harness;
pub mod netmodel;
pub mod sro;

pub use consensus::{OrderingPolicy, SimError, SimulationRun, Submission};
pub use domain::{ms, CommandId, Invocation, Ledger, Micros, NodeId, SlotSchedule};
pub use harness::{ExperimentConfig, HarnessError, PolicySpec, Scenario};
pub use netmodel::{CityTopology, DelayModel, TopologyError};
pub use sro::{Backend, RandomValue, SroConfig, SroError, SroHandle};
