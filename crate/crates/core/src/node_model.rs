//! Junction flux model.
//!
//! A movement `(a, b)` in the active phase transfers
//! `min(demand_a→b, share of supply_b)` vehicles per second across the
//! node. Demand comes from the commodity density at the upstream arc's
//! exit cell (or from the point queue for source arcs, capped by the
//! source's discharge rate); supply is the receiving capability of the
//! downstream arc's entry cell at its *total* density. When several
//! in-phase movements feed one arc, its supply is split in proportion to
//! their demands and capped at each demand, so no flow is ever held back
//! that could move (and none is created).
//!
//! The same solve doubles as the controller's expected-flux evaluator: the
//! expectation over fundamental-diagram parameter draws is estimated by
//! averaging the solve across a frozen draw set. One draw at the mean
//! parameters makes that exact for deterministic networks.

use crate::fd::ArcFd;
use crate::network::{ArcIdx, MovIdx, NetworkGraph, NodeIdx};
use crate::rng::{substream, StreamKind};
use crate::state::NetworkState;

/// Incident lookup arranged per arc, so the per-cell hot path only scans
/// incidents that can actually apply.
#[derive(Clone, Debug)]
pub struct IncidentMap {
    per_arc: Vec<Vec<usize>>,
}

impl IncidentMap {
    pub fn new(graph: &NetworkGraph) -> IncidentMap {
        let mut per_arc = vec![Vec::new(); graph.arcs.len()];
        for (i, inc) in graph.incidents.iter().enumerate() {
            per_arc[inc.arc.0].push(i);
        }
        IncidentMap { per_arc }
    }

    /// Combined capacity factor on one cell at time `t` (1 when untouched).
    pub fn factor(&self, graph: &NetworkGraph, arc: ArcIdx, cell: usize, t: f64) -> f64 {
        let mut f = 1.0;
        for &i in &self.per_arc[arc.0] {
            f *= graph.incidents[i].factor_at(cell, t);
        }
        f
    }

    pub fn arc_affected(&self, arc: ArcIdx) -> bool {
        !self.per_arc[arc.0].is_empty()
    }
}

/// Snapshot view of the effective fundamental diagram: realized arc
/// parameters with incident capacity factors applied per cell.
#[derive(Copy, Clone)]
pub struct FdView<'a> {
    pub graph: &'a NetworkGraph,
    /// Lane-aggregated parameters per arc (realized draw or the means).
    pub base: &'a [ArcFd],
    pub incidents: &'a IncidentMap,
    pub time: f64,
}

impl<'a> FdView<'a> {
    pub fn cell_fd(&self, arc: ArcIdx, cell: usize) -> ArcFd {
        self.base[arc.0].capped(self.incidents.factor(self.graph, arc, cell, self.time))
    }
}

/// Mean (configured) parameters for every arc.
pub fn base_arc_fds(graph: &NetworkGraph) -> Vec<ArcFd> {
    graph.arcs.iter().map(|a| a.arc_fd()).collect()
}

/// One realized parameter set per arc for the dynamics of a stochastic
/// run. Degenerates to the means when no arc has parameter spread.
pub fn realized_arc_fds(graph: &NetworkGraph, master_seed: u64) -> Vec<ArcFd> {
    graph
        .arcs
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if a.fd.is_stochastic() {
                let mut rng = substream(master_seed, StreamKind::RealizedParams, i as u64);
                a.fd.draw(&mut rng).for_lanes(a.lanes)
            } else {
                a.arc_fd()
            }
        })
        .collect()
}

/// Extra vehicles available to source queues this step (the arrivals just
/// drawn), indexed `[arc][commodity]`, in vehicles.
pub type SourceExtra<'a> = Option<&'a [Vec<f64>]>;

/// Sending rate of movement `m` (veh/s): queue drain capability for source
/// arcs, commodity demand at the exit cell otherwise. `ramp` is the
/// saturation ramp already evaluated for the movement's node.
pub fn movement_demand(
    graph: &NetworkGraph,
    state: &NetworkState,
    view: &FdView,
    m: MovIdx,
    ramp: f64,
    dt: f64,
    extra: SourceExtra,
) -> f64 {
    let mv = graph.movement(m);
    let arc = graph.arc(mv.from_arc);
    let raw = if arc.is_source {
        let queued = state.arcs[mv.from_arc.0].queue(mv.from_commodity);
        let pending = extra.map_or(0.0, |e| e[mv.from_arc.0][mv.from_commodity]);
        ((queued + pending) / dt).min(arc.q_max_source)
    } else {
        let exit = arc.cell_count - 1;
        let rho = state.arcs[mv.from_arc.0].rows[mv.from_commodity][exit];
        let fd = view.cell_fd(mv.from_arc, exit);
        (fd.v_free * rho).min(fd.q_max)
    };
    raw * ramp
}

/// Receiving rate of arc `b` at its entry cell (veh/s), from the total
/// density there.
pub fn arc_entry_supply(state: &NetworkState, view: &FdView, b: ArcIdx) -> f64 {
    let rho = state.arcs[b.0].cell_total(0);
    view.cell_fd(b, 0).supply(rho)
}

/// Solve one node under the phase with index `phase` of that node.
/// Returns the flux of each movement in the node's movement order
/// (zero for movements outside the phase).
pub fn solve_node(
    state: &NetworkState,
    view: &FdView,
    node: NodeIdx,
    phase: usize,
    ramp: f64,
    dt: f64,
    extra: SourceExtra,
) -> Vec<f64> {
    let graph = view.graph;
    let n = graph.node(node);
    let active = &n.phases[phase].movements;
    let mut flux = vec![0.0; n.movements.len()];
    if active.is_empty() {
        return flux;
    }

    // Demands of the active movements.
    let demands: Vec<f64> = active
        .iter()
        .map(|&m| movement_demand(graph, state, view, m, ramp, dt, extra))
        .collect();

    // Distinct downstream arcs in first-claim order, with demand totals.
    let mut targets: Vec<(ArcIdx, f64)> = Vec::new();
    for (&m, &d) in active.iter().zip(&demands) {
        let b = graph.movement(m).to_arc;
        match targets.iter_mut().find(|(arc, _)| *arc == b) {
            Some((_, sum)) => *sum += d,
            None => targets.push((b, d)),
        }
    }

    for (&m, &d) in active.iter().zip(&demands) {
        let mv = graph.movement(m);
        let (_, total_demand) = targets
            .iter()
            .find(|(arc, _)| *arc == mv.to_arc)
            .expect("target recorded");
        let supply = arc_entry_supply(state, view, mv.to_arc);
        let q = if *total_demand <= supply {
            d
        } else if *total_demand > 0.0 {
            d * (supply / total_demand)
        } else {
            0.0
        };
        let pos = n
            .movements
            .iter()
            .position(|&nm| nm == m)
            .expect("phase movement belongs to node");
        flux[pos] = q;
    }
    flux
}

/// Flux of a single movement under a given phase of its node; convenience
/// wrapper over [`solve_node`].
pub fn movement_flux(
    state: &NetworkState,
    view: &FdView,
    m: MovIdx,
    phase: usize,
    ramp: f64,
    dt: f64,
    extra: SourceExtra,
) -> f64 {
    let graph = view.graph;
    let node = graph.movement(m).node;
    let flux = solve_node(state, view, node, phase, ramp, dt, extra);
    let pos = graph
        .node(node)
        .movements
        .iter()
        .position(|&nm| nm == m)
        .expect("movement belongs to its node");
    flux[pos]
}

/// Frozen fundamental-diagram parameter draws for expectation estimates.
/// `per_draw[j][arc]` holds draw `j`'s lane-aggregated parameters for each
/// arc. A single draw at the mean parameters makes every estimate exact
/// for deterministic networks.
#[derive(Clone, Debug)]
pub struct FdDrawSet {
    pub per_draw: Vec<Vec<ArcFd>>,
    /// Estimated probability that a movement is demand-limited (its demand
    /// not exceeding raw downstream supply), refreshed by whoever last
    /// evaluated expectations with this set.
    pub p_cache: std::collections::HashMap<MovIdx, f64>,
}

impl FdDrawSet {
    /// Single draw at the configured means.
    pub fn deterministic(graph: &NetworkGraph) -> FdDrawSet {
        FdDrawSet {
            per_draw: vec![base_arc_fds(graph)],
            p_cache: Default::default(),
        }
    }

    /// `n` lognormal draws per arc from the configured means and CVs.
    pub fn sampled(graph: &NetworkGraph, n: usize, master_seed: u64) -> FdDrawSet {
        let mut per_arc: Vec<Vec<ArcFd>> = Vec::with_capacity(graph.arcs.len());
        for (i, a) in graph.arcs.iter().enumerate() {
            if a.fd.is_stochastic() {
                let mut rng = substream(master_seed, StreamKind::ExpectationParams, i as u64);
                per_arc.push((0..n).map(|_| a.fd.draw(&mut rng).for_lanes(a.lanes)).collect());
            } else {
                per_arc.push(vec![a.arc_fd(); n]);
            }
        }
        let per_draw = (0..n)
            .map(|j| per_arc.iter().map(|draws| draws[j]).collect())
            .collect();
        FdDrawSet {
            per_draw,
            p_cache: Default::default(),
        }
    }

    /// Explicit draw matrix (tests, known discrete scenarios).
    pub fn from_draws(per_draw: Vec<Vec<ArcFd>>) -> FdDrawSet {
        assert!(!per_draw.is_empty(), "need at least one draw");
        FdDrawSet {
            per_draw,
            p_cache: Default::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.per_draw.len()
    }
}

/// Expected fluxes of one node under a candidate phase, with the
/// per-movement probability of being demand-limited.
#[derive(Clone, Debug)]
pub struct ExpectedNodeFlux {
    /// Expected flux per movement, in node movement order.
    pub q: Vec<f64>,
    /// P(demand ≤ raw supply) per movement, in node movement order
    /// (1 for movements outside the phase's targets; they never discharge).
    pub p_demand_limited: Vec<f64>,
}

/// Average the node solve over a draw set. The saturation ramp is not
/// applied: candidate scoring asks what a phase *would* carry once
/// discharging. `extra` supplies the mean arrivals a source queue is
/// expected to gain during the step it is being scored for.
#[allow(clippy::too_many_arguments)]
pub fn expected_node_flux(
    graph: &NetworkGraph,
    state: &NetworkState,
    node: NodeIdx,
    phase: usize,
    draws: &FdDrawSet,
    incidents: &IncidentMap,
    time: f64,
    dt: f64,
    extra: SourceExtra,
) -> ExpectedNodeFlux {
    let n = graph.node(node);
    let mut q = vec![0.0; n.movements.len()];
    let mut p = vec![0.0; n.movements.len()];
    let count = draws.n() as f64;
    for params in &draws.per_draw {
        let view = FdView {
            graph,
            base: params,
            incidents,
            time,
        };
        let flux = solve_node(state, &view, node, phase, 1.0, dt, extra);
        for (acc, f) in q.iter_mut().zip(&flux) {
            *acc += f;
        }
        for (pos, &m) in n.movements.iter().enumerate() {
            let mv = graph.movement(m);
            let d = movement_demand(graph, state, &view, m, 1.0, dt, extra);
            let s = arc_entry_supply(state, &view, mv.to_arc);
            if d <= s {
                p[pos] += 1.0;
            }
        }
    }
    for acc in q.iter_mut().chain(p.iter_mut()) {
        *acc /= count;
    }
    ExpectedNodeFlux {
        q,
        p_demand_limited: p,
    }
}

/// The expected flux of one isolated movement written as a probability
/// split: `P·E[demand | demand ≤ supply] + (1−P)·E[supply | demand > supply]`.
/// By total expectation this equals `E[min(demand, supply)]`; estimating
/// the two forms from independent draw sets checks the estimator.
#[derive(Clone, Copy, Debug)]
pub struct PDecomposition {
    pub p: f64,
    pub mean_demand_when_limited: f64,
    pub mean_supply_when_limiting: f64,
    pub combined: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn p_decomposition(
    graph: &NetworkGraph,
    state: &NetworkState,
    m: MovIdx,
    draws: &FdDrawSet,
    incidents: &IncidentMap,
    time: f64,
    dt: f64,
    extra: SourceExtra,
) -> PDecomposition {
    let mv = graph.movement(m);
    let mut limited = (0usize, 0.0); // (count, demand sum) on {demand ≤ supply}
    let mut limiting = (0usize, 0.0); // (count, supply sum) on the complement
    for params in &draws.per_draw {
        let view = FdView {
            graph,
            base: params,
            incidents,
            time,
        };
        let d = movement_demand(graph, state, &view, m, 1.0, dt, extra);
        let s = arc_entry_supply(state, &view, mv.to_arc);
        if d <= s {
            limited.0 += 1;
            limited.1 += d;
        } else {
            limiting.0 += 1;
            limiting.1 += s;
        }
    }
    let n = draws.n() as f64;
    let p = limited.0 as f64 / n;
    let mean_d = if limited.0 > 0 { limited.1 / limited.0 as f64 } else { 0.0 };
    let mean_s = if limiting.0 > 0 { limiting.1 / limiting.0 as f64 } else { 0.0 };
    PDecomposition {
        p,
        mean_demand_when_limited: mean_d,
        mean_supply_when_limiting: mean_s,
        combined: p * mean_d + (1.0 - p) * mean_s,
    }
}
