//! Error types for configuration, network construction, and simulation.

use thiserror::Error;

/// Failure while parsing or validating a config document, or while
/// assembling the network graph from it.
#[derive(Debug, Error)]
pub enum BuildError {
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("unsupported schema_version {found} (this build reads version {supported})")]
    SchemaVersion { found: u32, supported: u32 },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("unknown {kind} id `{id}` referenced by {referrer}")]
    UnknownRef {
        kind: &'static str,
        id: String,
        referrer: String,
    },

    #[error("movement `{movement}` connects arcs that do not meet at one node (`{from_arc}` ends at {from_end}, `{to_arc}` starts at {to_start})")]
    MovementNodeMismatch {
        movement: String,
        from_arc: String,
        from_end: String,
        to_arc: String,
        to_start: String,
    },

    #[error("node `{node}` has no phases")]
    NoPhases { node: String },

    #[error("node `{node}` has no movements")]
    NoMovements { node: String },

    #[error("phase `{phase}` at node `{node}` lists movement `{movement}` which belongs to node `{movement_node}`")]
    PhaseMovementElsewhere {
        phase: String,
        node: String,
        movement: String,
        movement_node: String,
    },

    #[error("node `{node}` has non-positive decision interval {cadence} s")]
    NonPositiveCadence { node: String, cadence: f64 },

    #[error("arc `{arc}`: {what} must be positive (got {value})")]
    NonPositiveParam {
        arc: String,
        what: &'static str,
        value: f64,
    },

    #[error("configured dt = {dt} s violates the CFL bound {bound} s set by arc `{arc}` (dx = {dx} m)")]
    CflViolation {
        arc: String,
        dt: f64,
        bound: f64,
        dx: f64,
    },

    #[error("turn fractions out of arc `{arc}` sum to {sum} at t = {time} s (must sum to 1)")]
    SplitSum { arc: String, sum: f64, time: f64 },

    #[error("arc `{arc}` is declared as a source but movements out of it span more than one node")]
    SourceManyNodes { arc: String },

    #[error("arc `{arc}` receives no inflow: it has no predecessor movements and no arrival process")]
    UnreachableArc { arc: String },

    #[error("arrival on `{arc}`: {reason}")]
    BadArrival { arc: String, reason: String },

    #[error("initial condition on `{arc}`: {reason}")]
    BadInitial { arc: String, reason: String },

    #[error("incident on `{arc}`: {reason}")]
    BadIncident { arc: String, reason: String },

    #[error("fixed-time plan for node `{node}`: {reason}")]
    BadFixedTimePlan { node: String, reason: String },

    #[error("{0}")]
    Other(String),
}

/// Failure during a simulation run. These indicate either a corrupted state
/// (a solver bug) or an I/O problem while writing outputs.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("negative density {value} in arc `{arc}` cell {cell} at t = {time} s")]
    NegativeDensity {
        arc: String,
        cell: usize,
        value: f64,
        time: f64,
    },

    #[error("density {value} exceeds jam capacity {cap} in arc `{arc}` cell {cell} at t = {time} s")]
    CapacityExceeded {
        arc: String,
        cell: usize,
        value: f64,
        cap: f64,
        time: f64,
    },

    #[error("negative source queue {value} on arc `{arc}` at t = {time} s")]
    NegativeQueue { arc: String, value: f64, time: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A run could not even start (bad policy/plan combination).
    #[error("scenario setup: {0}")]
    Setup(#[from] BuildError),
}
