//! Simulation library for a deloaded wind farm under cooperative dispatch.
//!
//! A wind farm is *deloaded* when it deliberately captures less power than the
//! wind allows, keeping headroom for grid support. The question this library
//! answers is how `n` doubly-fed induction generators (DFIGs) should share a
//! farm-level power reference so that every machine runs at the **same
//! utilization** — the same fraction of its own available power — while the
//! farm total tracks the reference.
//!
//! The pieces, bottom to top:
//!
//! - [`turbine`] — aerodynamic conversion and the reduced-order DFIG model.
//! - [`wind`] — mean wind plus an optional second-order turbulence filter with
//!   a fixed, documented random stream (reproducible runs).
//! - [`protocol`] — the leader–follower dispatch layer: one shared tracking
//!   integrator plus a chain of utilization-consensus updates, and the two
//!   farm aggregation schemes (exact chain relay / iterative averaging).
//! - [`controller`] — the rotor-side-converter control law that makes each
//!   machine's electrical torque realize its dispatch update, with an
//!   exponentially decaying Lyapunov tracking error.
//! - [`sim`] — fixed-step RK4 engine closing the loop, with deterministic
//!   traces.
//! - [`analysis`] — equilibria, time-scale separation diagnostics, gain
//!   sweeps, and trace metrics.
//! - [`config`] / [`trace`] — TOML scenario schema and CSV/summary output.

pub mod analysis;
pub mod config;
pub mod controller;
pub mod error;
pub mod protocol;
pub mod sim;
pub mod trace;
pub mod turbine;
pub mod wind;

pub use error::Error;
