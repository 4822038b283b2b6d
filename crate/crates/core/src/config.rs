//! Config document model.
//!
//! A network plus everything needed to run it lives in one TOML document.
//! The full schema and the table of defaults are documented in
//! `docs/CONFIG.md`; this module defines the serde types, the
//! piecewise-constant time profile used by arrival rates and turn
//! fractions, and parse/serialize round-trips. Cross-field validation
//! (references, conservation of turn fractions, CFL, …) happens when the
//! document is assembled into a network graph.

use serde::{Deserialize, Serialize};

use crate::error::BuildError;

/// Schema generation this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

/// A value that is either constant or piecewise-constant in time.
///
/// The piecewise form is a list of `[t_start, value]` pairs sorted by time;
/// the value at time `t` is the entry with the greatest `t_start <= t`.
/// The first entry must start at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    Piecewise(Vec<(f64, f64)>),
}

impl Profile {
    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Piecewise(points) => {
                let mut current = points.first().map(|p| p.1).unwrap_or(0.0);
                for &(start, v) in points {
                    if start <= t {
                        current = v;
                    } else {
                        break;
                    }
                }
                current
            }
        }
    }

    /// Times at which the value may change (for validation sweeps).
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Profile::Constant(_) => vec![0.0],
            Profile::Piecewise(points) => points.iter().map(|p| p.0).collect(),
        }
    }

    pub fn validate(&self, what: &str) -> Result<(), BuildError> {
        if let Profile::Piecewise(points) = self {
            if points.is_empty() {
                return Err(BuildError::Other(format!("{what}: empty profile")));
            }
            if points[0].0 != 0.0 {
                return Err(BuildError::Other(format!(
                    "{what}: profile must start at t = 0 (starts at {})",
                    points[0].0
                )));
            }
            for pair in points.windows(2) {
                if pair[1].0 <= pair[0].0 {
                    return Err(BuildError::Other(format!(
                        "{what}: profile times must be strictly increasing"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Scale all values by `factor` (used by demand sweeps).
    pub fn scaled(&self, factor: f64) -> Profile {
        match self {
            Profile::Constant(v) => Profile::Constant(v * factor),
            Profile::Piecewise(points) => {
                Profile::Piecewise(points.iter().map(|&(t, v)| (t, v * factor)).collect())
            }
        }
    }

    /// Scale values by `factor` inside `[start, end)` only — a demand
    /// peak layered on top of the base profile.
    pub fn scaled_within(&self, factor: f64, start: f64, end: f64) -> Profile {
        let mut times: Vec<f64> = self.breakpoints();
        for t in [start, end] {
            if !times.contains(&t) {
                times.push(t);
            }
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.retain(|&t| t >= 0.0);
        let points = times
            .iter()
            .map(|&t| {
                let w = if t >= start && t < end { factor } else { 1.0 };
                (t, self.value_at(t) * w)
            })
            .collect();
        Profile::Piecewise(points)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcDecl {
    pub id: String,
    /// Node the arc emanates from; omit for arcs entering at the network
    /// boundary and for source arcs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    /// Node the arc terminates at; omit for arcs whose traffic leaves the
    /// network at the downstream end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    /// Point-queue source arc (no spatial extent). Requires `to`.
    #[serde(default)]
    pub source: bool,
    /// Length in m; ignored for source arcs.
    #[serde(default)]
    pub length: f64,
    #[serde(default = "default_lanes")]
    pub lanes: f64,
    #[serde(default = "default_v_free")]
    pub v_free: f64,
    #[serde(default = "default_wave_speed")]
    pub wave_speed: f64,
    #[serde(default = "default_jam_density")]
    pub jam_density: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub cv_v_free: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub cv_wave_speed: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub cv_jam_density: f64,
    /// Discharge cap for source arcs (veh/s). Defaults to
    /// `sim.source_q_max_per_lane` times the lane count of the widest
    /// successor arc.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max: Option<f64>,
}

fn default_lanes() -> f64 {
    1.0
}
fn default_v_free() -> f64 {
    15.0
}
fn default_wave_speed() -> f64 {
    5.0
}
fn default_jam_density() -> f64 {
    0.15
}
fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDecl {
    pub id: String,
    /// Decision interval (s): the signal re-selects a phase every `cadence`
    /// seconds, which doubles as the minimum phase duration.
    #[serde(default = "default_cadence")]
    pub cadence: f64,
}

fn default_cadence() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovementDecl {
    /// Defaults to `"<from>-><to>"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub from: String,
    pub to: String,
    /// Fraction of the from-arc's traffic headed to `to`. Fractions out of
    /// one arc must sum to 1 at all times. Defaults to an equal share.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Profile>,
    /// Weight constant for control scoring.
    #[serde(default = "default_c")]
    pub c: f64,
}

fn default_c() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDecl {
    pub node: String,
    /// Defaults to `"<node>/<index>"` in declaration order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub movements: Vec<String>,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalProcess {
    /// Poisson counts with the profile rate as intensity.
    #[default]
    Poisson,
    /// Exactly `rate · dt` vehicles per step (fluid arrivals).
    Deterministic,
}



#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalDecl {
    /// Arc receiving the inflow: a declared source arc, a boundary arc with
    /// no `from` node (a source arc is inserted in front of it), or — with
    /// `position` — any physical arc (the arc is split at that point and a
    /// source merges in).
    pub arc: String,
    /// For declared source arcs with several movements: which successor arc
    /// this stream is headed to. Defaults to the source's only successor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    /// Arrival rate in veh/s, constant or piecewise.
    pub rate: Profile,
    #[serde(default)]
    pub process: ArrivalProcess,
    /// Injection point (m from the upstream end) for interior inflows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDecl {
    pub arc: String,
    /// Lane-aggregated density (veh/m) for physical arcs, or queued
    /// vehicles for source arcs.
    pub density: f64,
    /// Range [from_m, to_m) the density applies to; default is the whole
    /// arc. A cell is covered when its center lies in the range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_m: Option<f64>,
    /// Restrict to the commodity headed for this successor arc; default
    /// distributes across commodities by their turn fractions at t = 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_arc: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncidentDecl {
    pub arc: String,
    /// Inclusive cell index range `[first, last]` the blockage covers.
    pub cells: (usize, usize),
    /// Window `[start, end)` in s.
    pub start: f64,
    pub end: f64,
    pub lanes_blocked: f64,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    FixedTime,
    Bp,
    Cabp,
    #[default]
    Pwbp,
}

impl std::str::FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed_time" | "ft" => Ok(PolicyKind::FixedTime),
            "bp" => Ok(PolicyKind::Bp),
            "cabp" => Ok(PolicyKind::Cabp),
            "pwbp" => Ok(PolicyKind::Pwbp),
            other => Err(format!(
                "unknown policy `{other}` (expected ft, bp, cabp, or pwbp)"
            )),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PolicyKind::FixedTime => "ft",
            PolicyKind::Bp => "bp",
            PolicyKind::Cabp => "cabp",
            PolicyKind::Pwbp => "pwbp",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedTimePlanDecl {
    pub node: String,
    /// Green durations (s), one per phase of the node in declaration order.
    pub durations: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub policy: PolicyKind,
    /// Parameter draws per expectation estimate; 1 means deterministic
    /// evaluation at the mean parameters.
    pub mc_samples: usize,
    /// Record every phase decision (written as decisions.csv by the CLI).
    pub audit: bool,
    pub fixed_time: Vec<FixedTimePlanDecl>,
}

impl Default for ControllerSection {
    fn default() -> Self {
        ControllerSection {
            policy: PolicyKind::Pwbp,
            mc_samples: 1,
            audit: false,
            fixed_time: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Run length (s).
    pub horizon: f64,
    /// Explicit step (s); 0 selects 0.9 × the tightest CFL bound.
    pub dt: f64,
    /// Target cell length (m); each arc uses `max(1, round(len/target))`
    /// cells.
    pub cell_target_length: f64,
    /// Start-up lost-time constant (s) for the saturation ramp after a
    /// phase change.
    pub tau_startup: f64,
    /// Emit a metrics record every this many steps.
    pub metrics_stride: usize,
    /// Evaluate the quadratic functional every this many steps (it is the
    /// only O(cells²) term in the loop); records in between repeat the last
    /// value.
    pub lyapunov_stride: usize,
    /// Default source discharge cap, per lane of the successor arc
    /// (veh/s/lane).
    pub source_q_max_per_lane: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            horizon: 3600.0,
            dt: 0.0,
            cell_target_length: 50.0,
            tau_startup: 2.0,
            metrics_stride: 1,
            lyapunov_stride: 1,
            source_q_max_per_lane: 0.5,
        }
    }
}

/// Demand peak used by recovery comparisons: inside the window every
/// arrival rate is multiplied by `peak_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverySection {
    pub peak_start: f64,
    pub peak_end: f64,
    pub peak_scale: f64,
}

/// One parsed config document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub sim: SimSection,
    pub arcs: Vec<ArcDecl>,
    #[serde(default)]
    pub nodes: Vec<NodeDecl>,
    #[serde(default)]
    pub movements: Vec<MovementDecl>,
    #[serde(default)]
    pub phases: Vec<PhaseDecl>,
    #[serde(default)]
    pub arrivals: Vec<ArrivalDecl>,
    #[serde(default)]
    pub initial: Vec<InitialDecl>,
    #[serde(default)]
    pub incidents: Vec<IncidentDecl>,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<RecoverySection>,
}

impl ConfigDocument {
    pub fn from_toml_str(text: &str) -> Result<Self, BuildError> {
        let doc: ConfigDocument =
            toml::from_str(text).map_err(|e| BuildError::Parse(e.to_string()))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(BuildError::SchemaVersion {
                found: doc.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        Ok(doc)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, BuildError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BuildError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
