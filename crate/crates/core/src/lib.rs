//! Macroscopic traffic-network simulator with queue-aware signal control.
//!
//! The crate models a road network as arcs carrying per-destination
//! ("commodity") densities under a triangular flow–density relation,
//! advanced by a finite-volume scheme, with signalized junctions whose
//! phases are chosen online by pressure-style controllers. It provides:
//!
//! - [`config`]: the TOML scenario schema and [`config::ConfigDocument`];
//! - [`network`]: compilation of a document into a validated
//!   [`network::NetworkGraph`] (cells, commodities, turn splits, sources);
//! - [`fd`]: the triangular fundamental diagram and its lane-aggregated,
//!   incident-capped form;
//! - [`node_model`]: junction demand/supply resolution and expected-flux
//!   estimation over parameter draws;
//! - [`step`]: the simulation loop — arrivals, movement fluxes, cell
//!   updates, metrics;
//! - [`control`]: the phase-selection policies (fixed-time, two
//!   queue-based baselines, and the position-weighted controller);
//! - [`stability`]: the quadratic network energy, its drift, and
//!   stability verdicts for load sweeps;
//! - [`scenario`]: whole-run orchestration — capacity sweeps, incidents,
//!   recovery experiments;
//! - [`metrics`]: run summaries and deterministic CSV/JSON writers.
//!
//! Runs are reproducible: all randomness derives from one master seed
//! through named substreams, and parallel execution (the `parallel`
//! feature, on by default) produces byte-identical output to the
//! sequential fallback.

// Validation deliberately writes `!(x > 0.0)` so that NaN fails the
// check; the suggested `x <= 0.0` would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod error;
pub mod exec;
pub mod fd;
pub mod metrics;
pub mod network;
pub mod node_model;
pub mod rng;
pub mod scenario;
pub mod stability;
pub mod state;
pub mod step;

pub use config::ConfigDocument;
pub use error::{BuildError, SimError};
pub use exec::Parallelism;
pub use network::{build_network, NetworkGraph};
pub use state::NetworkState;
