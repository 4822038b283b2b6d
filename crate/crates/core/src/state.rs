//! Simulation state: cell densities per commodity plus point queues on
//! source arcs, and the signal state of every node.

use crate::error::{BuildError, SimError};
use crate::network::{Arc, ArcIdx, NetworkGraph};

/// Slightly negative cell values produced by floating-point cancellation
/// are snapped to zero; anything below this indicates a solver bug.
pub const NEG_DENSITY_GUARD: f64 = -1e-12;

/// Relative slack allowed on the jam-density cap check.
pub const CAP_GUARD_REL: f64 = 1e-9;

/// Per-arc state. `rows[k]` is commodity `k`: cell densities in veh/m for
/// physical arcs (one entry per cell), or a single entry holding the queued
/// vehicle count for source arcs.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcState {
    pub rows: Vec<Vec<f64>>,
}

impl ArcState {
    pub fn zeros(arc: &Arc) -> ArcState {
        let width = if arc.is_source { 1 } else { arc.cell_count };
        ArcState {
            rows: vec![vec![0.0; width]; arc.commodities.len()],
        }
    }

    /// Total density in cell `i`, summed over commodities (veh/m).
    pub fn cell_total(&self, i: usize) -> f64 {
        self.rows.iter().map(|r| r[i]).sum()
    }

    /// Vehicles on the arc: integrated density, or the queue total.
    pub fn mass(&self, arc: &Arc) -> f64 {
        let raw: f64 = self.rows.iter().flatten().sum();
        if arc.is_source {
            raw
        } else {
            raw * arc.dx
        }
    }

    /// Queued vehicles for commodity `k` of a source arc.
    pub fn queue(&self, k: usize) -> f64 {
        self.rows[k][0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    pub arcs: Vec<ArcState>,
    /// Simulation clock (s).
    pub time: f64,
}

impl NetworkState {
    /// Empty state at `t = 0`.
    pub fn empty(graph: &NetworkGraph) -> NetworkState {
        NetworkState {
            arcs: graph.arcs.iter().map(ArcState::zeros).collect(),
            time: 0.0,
        }
    }

    /// State at `t = 0` with the document's initial blocks applied.
    /// Blocks are additive; a cell belongs to a block when its center lies
    /// in the block's range. Blocks without a commodity are distributed by
    /// the turn fractions at `t = 0`.
    pub fn initial(graph: &NetworkGraph) -> Result<NetworkState, BuildError> {
        let mut state = NetworkState::empty(graph);
        for b in &graph.initial {
            let arc = graph.arc(b.arc);
            let slot = &mut state.arcs[b.arc.0];
            if arc.is_source {
                match b.commodity {
                    Some(k) => slot.rows[k][0] += b.density,
                    None => {
                        for k in 0..arc.commodities.len() {
                            slot.rows[k][0] += b.density * arc.splits[k].value_at(0.0);
                        }
                    }
                }
                continue;
            }
            let (f, t) = b.range.expect("physical initial blocks carry a range");
            for i in 0..arc.cell_count {
                let x = arc.cell_x(i);
                if x < f || x >= t {
                    continue;
                }
                match b.commodity {
                    Some(k) => slot.rows[k][i] += b.density,
                    None => {
                        for k in 0..arc.commodities.len() {
                            slot.rows[k][i] += b.density * arc.splits[k].value_at(0.0);
                        }
                    }
                }
            }
        }
        // Initial blocks may stack; reject states that start above jam.
        for (ai, arc) in graph.arcs.iter().enumerate() {
            if arc.is_source {
                continue;
            }
            let cap = arc.fd.jam_density * arc.lanes;
            for i in 0..arc.cell_count {
                let total = state.arcs[ai].cell_total(i);
                if total > cap * (1.0 + CAP_GUARD_REL) {
                    return Err(BuildError::BadInitial {
                        arc: arc.id.clone(),
                        reason: format!(
                            "cell {i} starts at {total} veh/m, above jam density {cap}"
                        ),
                    });
                }
            }
        }
        Ok(state)
    }

    /// Vehicles in the whole network, source queues included.
    pub fn total_vehicles(&self, graph: &NetworkGraph) -> f64 {
        self.arcs
            .iter()
            .zip(&graph.arcs)
            .map(|(s, a)| s.mass(a))
            .sum()
    }

    /// Vehicles waiting in source queues.
    pub fn source_queue_total(&self, graph: &NetworkGraph) -> f64 {
        self.arcs
            .iter()
            .zip(&graph.arcs)
            .filter(|(_, a)| a.is_source)
            .map(|(s, a)| s.mass(a))
            .sum()
    }

    /// Verify density bounds everywhere; used after every step.
    pub fn check_bounds(&self, graph: &NetworkGraph) -> Result<(), SimError> {
        for (ai, arc) in graph.arcs.iter().enumerate() {
            let slot = &self.arcs[ai];
            if arc.is_source {
                for row in &slot.rows {
                    if row[0] < NEG_DENSITY_GUARD {
                        return Err(SimError::NegativeQueue {
                            arc: arc.id.clone(),
                            value: row[0],
                            time: self.time,
                        });
                    }
                }
                continue;
            }
            let cap = arc.fd.jam_density * arc.lanes;
            for i in 0..arc.cell_count {
                for row in &slot.rows {
                    if row[i] < NEG_DENSITY_GUARD {
                        return Err(SimError::NegativeDensity {
                            arc: arc.id.clone(),
                            cell: i,
                            value: row[i],
                            time: self.time,
                        });
                    }
                }
                let total = slot.cell_total(i);
                if total > cap * (1.0 + CAP_GUARD_REL) {
                    return Err(SimError::CapacityExceeded {
                        arc: arc.id.clone(),
                        cell: i,
                        value: total,
                        cap,
                        time: self.time,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Signal state: the active phase of every node and when it began.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalState {
    /// Active phase index per node.
    pub active: Vec<usize>,
    /// Time the active phase began (s).
    pub green_start: Vec<f64>,
    /// Number of decision epochs already taken per node.
    pub epochs: Vec<u64>,
}

impl SignalState {
    pub fn new(graph: &NetworkGraph) -> SignalState {
        SignalState {
            active: vec![0; graph.nodes.len()],
            green_start: vec![0.0; graph.nodes.len()],
            epochs: vec![0; graph.nodes.len()],
        }
    }

    /// Whether `movement` may discharge under the current phases.
    pub fn movement_active(&self, graph: &NetworkGraph, m: crate::network::MovIdx) -> bool {
        let mv = graph.movement(m);
        let node = graph.node(mv.node);
        node.phases[self.active[mv.node.0]].movements.contains(&m)
    }
}

/// Convenience for tests and fixtures: overwrite one commodity row.
pub fn set_uniform_density(
    state: &mut NetworkState,
    graph: &NetworkGraph,
    arc: ArcIdx,
    commodity: usize,
    density: f64,
) {
    let n = graph.arc(arc).cell_count.max(1);
    state.arcs[arc.0].rows[commodity] = vec![density; n];
}
