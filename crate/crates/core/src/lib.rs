//! Valley-filling EV charge scheduling with obfuscated state exchange.
//!
//! This crate simulates a fleet of electric vehicles that cooperatively
//! flatten the overnight load profile of a radial distribution feeder.
//! A system operator broadcasts aggregate price-like subgradients, each
//! vehicle runs a projected gradient step on its own charging profile,
//! and nodal voltage limits are enforced through dual multipliers on a
//! linearized power-flow model.
//!
//! Vehicles never reveal their charging profiles. Before upload, each
//! profile is multiplied slot-by-slot against freshly drawn sets of
//! normal random variates (the obfuscation key is the distribution
//! `(mu, sigma_sq)` and the set cardinality `m`); the operator recovers
//! per-bus aggregates from block means of the summed uploads. The
//! [`adversary`] module replays recorded transcripts against the
//! threat models the scheme is designed around and produces an audit
//! report.
//!
//! Module map:
//!
//! * [`network`] — radial feeder topology, shared-path impedance
//!   matrices, linearized voltage profiles and bound checks.
//! * [`fleet`] — per-vehicle specs, feasible charging sets, and the
//!   continuous-knapsack projection onto them.
//! * [`solver`] — primal/dual subgradients, update rules, objective,
//!   and a centralized reference solver for small instances.
//! * [`obfuscation`] — random-set draws, state obfuscation, bus
//!   aggregation, block-mean recovery, and spread diagnostics.
//! * [`protocol`] — the iteration loop between vehicles and the
//!   operator, message transcripts, and convergence traces.
//! * [`adversary`] — observer access sets, wrong-key attacks, and the
//!   transcript audit.
//! * [`scenario`] — the JSON scenario document, validation, synthetic
//!   baseline curves, and the bundled 13-bus study case.

pub mod adversary;
pub mod error;
pub mod fleet;
pub mod network;
pub mod obfuscation;
pub mod protocol;
pub mod rng;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
pub use fleet::{ChargingProfile, EvSpec, TimeGrid};
pub use network::{LineSegment, NetworkModel, VoltageProfile};
pub use obfuscation::{BusAggregate, ObfuscatedState, ObfuscationKey, RecoveredLoad};
pub use protocol::{
    ConvergenceTrace, GroundTruth, Message, Mode, Participant, Payload, RecordPolicy, RunOptions,
    RunOutput, Transcript,
};
pub use scenario::{Scenario, ScenarioDocument};
pub use solver::{DualState, SubgradientContext};
