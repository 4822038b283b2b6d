//! Network graph: arcs, nodes, movements, phases.
//!
//! A config document describes roads the way an engineer would draw them;
//! this module turns that into the solver's indexed graph. Two conveniences
//! are expanded along the way:
//!
//! * an arrival on an arc with no upstream node gets a point-queue source
//!   arc and an always-green injection node inserted in front of it;
//! * an arrival with a `position` splits the host arc in two at that point
//!   and merges the new source in at an unsignalized node.
//!
//! After expansion every source arc is an explicit graph object, so a
//! round trip through [`NetworkGraph::emit_config`] reproduces the graph
//! exactly.
//!
//! Commodities: traffic on an arc is disaggregated by the successor arc it
//! is headed to (one pseudo-commodity on arcs whose traffic leaves the
//! network downstream). Inflow is distributed over commodities by the turn
//! fractions at the moment of entry and keeps its label while advecting.

use std::collections::{HashMap, HashSet};

use crate::config::{
    ArcDecl, ArrivalDecl, ArrivalProcess, ConfigDocument, ControllerSection, IncidentDecl,
    InitialDecl, MovementDecl, NodeDecl, PhaseDecl, Profile, RecoverySection, SimSection,
};
use crate::error::BuildError;
use crate::fd::{ArcFd, FundamentalDiagram};

/// Fraction of the tightest CFL bound used when the step is auto-selected.
pub const CFL_SAFETY: f64 = 0.9;

/// Tolerance for the sum of turn fractions out of one arc.
pub const SPLIT_SUM_TOL: f64 = 1e-9;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArcIdx(pub usize);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeIdx(pub usize);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MovIdx(pub usize);

/// One traffic stream on an arc, labeled by where it exits to.
#[derive(Clone, Debug, PartialEq)]
pub struct Commodity {
    /// Successor arc, or `None` for the sink stream of an exit arc.
    pub to_arc: Option<ArcIdx>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Arc {
    pub id: String,
    pub from: Option<NodeIdx>,
    pub to: Option<NodeIdx>,
    pub is_source: bool,
    /// Length in m (0 for source arcs).
    pub length: f64,
    pub lanes: f64,
    pub fd: FundamentalDiagram,
    /// Discharge cap for source arcs (veh/s); 0 for physical arcs.
    pub q_max_source: f64,
    /// Number of cells (0 for source arcs).
    pub cell_count: usize,
    /// Cell length (m).
    pub dx: f64,
    pub commodities: Vec<Commodity>,
    /// Turn fraction per commodity, aligned with `commodities`.
    pub splits: Vec<Profile>,
    /// Movements into this arc.
    pub incoming: Vec<MovIdx>,
    /// Movements out of this arc, aligned with `commodities` for arcs that
    /// have successors.
    pub outgoing: Vec<MovIdx>,
}

impl Arc {
    /// Whether traffic leaves the network at the downstream end.
    pub fn is_exit(&self) -> bool {
        !self.is_source && self.outgoing.is_empty()
    }

    /// Lane-aggregated parameters at full capacity.
    pub fn arc_fd(&self) -> ArcFd {
        self.fd.for_lanes(self.lanes)
    }

    /// Center of cell `i` in m from the upstream end.
    pub fn cell_x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    /// Spatial holding capacity in vehicles (0 for source arcs, whose
    /// queues are unbounded).
    pub fn capacity_veh(&self) -> f64 {
        if self.is_source {
            0.0
        } else {
            self.fd.jam_density * self.lanes * self.length
        }
    }

    /// Commodity index for traffic headed to `to_arc`.
    pub fn commodity_to(&self, to_arc: ArcIdx) -> Option<usize> {
        self.commodities.iter().position(|c| c.to_arc == Some(to_arc))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase {
    pub id: String,
    pub movements: Vec<MovIdx>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: String,
    /// Decision interval (s); doubles as the minimum phase duration.
    pub cadence: f64,
    pub movements: Vec<MovIdx>,
    pub phases: Vec<Phase>,
}

impl Node {
    /// Unsignalized nodes (single allowable phase) never change phase and
    /// therefore never incur start-up lost time.
    pub fn is_signalized(&self) -> bool {
        self.phases.len() > 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Movement {
    pub id: String,
    pub from_arc: ArcIdx,
    pub to_arc: ArcIdx,
    pub node: NodeIdx,
    /// Weight constant (must be positive).
    pub c: f64,
    /// Index of the commodity on `from_arc` that this movement serves.
    pub from_commodity: usize,
    /// Queue-model service rate (veh/s): the smaller of the two arc
    /// capacities. Used by policies that score with a fixed rate instead of
    /// the state-dependent flux.
    pub sat_flow: f64,
}

/// Arrival process bound to one commodity of a source arc.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalBinding {
    pub arc: ArcIdx,
    pub commodity: usize,
    pub rate: Profile,
    pub process: ArrivalProcess,
}

/// Lane blockage on a cell range of one arc during a time window.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidentBinding {
    pub arc: ArcIdx,
    /// Inclusive cell range.
    pub cells: (usize, usize),
    pub start: f64,
    pub end: f64,
    /// Capacity factor `1 − lanes_blocked / lanes` applied inside the
    /// window.
    pub factor: f64,
    pub lanes_blocked: f64,
}

impl IncidentBinding {
    /// Capacity factor in force on `cell` of this incident's arc at `t`.
    pub fn factor_at(&self, cell: usize, t: f64) -> f64 {
        if t >= self.start && t < self.end && cell >= self.cells.0 && cell <= self.cells.1 {
            self.factor
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialBinding {
    pub arc: ArcIdx,
    pub commodity: Option<usize>,
    pub density: f64,
    /// Range in m the block applies to (physical arcs only).
    pub range: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    pub arcs: Vec<Arc>,
    pub nodes: Vec<Node>,
    pub movements: Vec<Movement>,
    pub arrivals: Vec<ArrivalBinding>,
    pub incidents: Vec<IncidentBinding>,
    pub initial: Vec<InitialBinding>,
    /// Global step (s), either configured or `CFL_SAFETY` × the tightest
    /// CFL bound.
    pub dt: f64,
    pub sim: SimSection,
    pub controller: ControllerSection,
    pub recovery: Option<RecoverySection>,
    arc_index: HashMap<String, ArcIdx>,
    node_index: HashMap<String, NodeIdx>,
    movement_index: HashMap<String, MovIdx>,
}

impl NetworkGraph {
    pub fn arc(&self, i: ArcIdx) -> &Arc {
        &self.arcs[i.0]
    }

    pub fn node(&self, i: NodeIdx) -> &Node {
        &self.nodes[i.0]
    }

    pub fn movement(&self, i: MovIdx) -> &Movement {
        &self.movements[i.0]
    }

    pub fn arc_by_id(&self, id: &str) -> Option<ArcIdx> {
        self.arc_index.get(id).copied()
    }

    pub fn node_by_id(&self, id: &str) -> Option<NodeIdx> {
        self.node_index.get(id).copied()
    }

    pub fn movement_by_id(&self, id: &str) -> Option<MovIdx> {
        self.movement_index.get(id).copied()
    }

    /// Turn fraction into commodity `k` of arc `a` at time `t`.
    pub fn split_at(&self, a: ArcIdx, k: usize, t: f64) -> f64 {
        self.arcs[a.0].splits[k].value_at(t)
    }

    /// Movement constant attached to commodity `k` of arc `a`: the
    /// constant of the movement that commodity is destined for, or 1 for
    /// traffic that exits the network from `a`.
    pub fn commodity_constant(&self, a: ArcIdx, k: usize) -> f64 {
        let arc = &self.arcs[a.0];
        match arc.commodities[k].to_arc {
            None => 1.0,
            Some(next) => arc
                .outgoing
                .iter()
                .map(|&m| self.movement(m))
                .find(|mv| mv.to_arc == next)
                .map_or(1.0, |mv| mv.c),
        }
    }

    /// Tightest CFL bound over physical arcs (s), i.e. `min dx / max(v, w)`.
    pub fn cfl_bound(&self) -> f64 {
        self.arcs
            .iter()
            .filter(|a| !a.is_source)
            .map(|a| a.dx / a.fd.v_free.max(a.fd.wave_speed))
            .fold(f64::INFINITY, f64::min)
    }

    /// Diagnostic for the per-node decomposition assumption: movements
    /// shared between phases of *different* nodes. Structurally impossible
    /// for graphs built here (a movement belongs to one node), so anything
    /// returned indicates a corrupted graph.
    pub fn phase_disjointness_violations(&self) -> Vec<(String, String, String)> {
        let mut owner: HashMap<MovIdx, NodeIdx> = HashMap::new();
        let mut violations = Vec::new();
        for (ni, node) in self.nodes.iter().enumerate() {
            for phase in &node.phases {
                for &m in &phase.movements {
                    match owner.get(&m) {
                        Some(&prev) if prev != NodeIdx(ni) => violations.push((
                            self.nodes[prev.0].id.clone(),
                            node.id.clone(),
                            self.movements[m.0].id.clone(),
                        )),
                        _ => {
                            owner.insert(m, NodeIdx(ni));
                        }
                    }
                }
            }
        }
        violations
    }

    /// Serialize the graph back into a config document. The result declares
    /// every source arc explicitly, so building it reproduces this graph.
    pub fn emit_config(&self) -> ConfigDocument {
        let arcs = self
            .arcs
            .iter()
            .map(|a| ArcDecl {
                id: a.id.clone(),
                from: a.from.map(|n| self.nodes[n.0].id.clone()),
                to: a.to.map(|n| self.nodes[n.0].id.clone()),
                source: a.is_source,
                length: a.length,
                lanes: a.lanes,
                v_free: a.fd.v_free,
                wave_speed: a.fd.wave_speed,
                jam_density: a.fd.jam_density,
                cv_v_free: a.fd.cv_v_free,
                cv_wave_speed: a.fd.cv_wave_speed,
                cv_jam_density: a.fd.cv_jam_density,
                q_max: if a.is_source { Some(a.q_max_source) } else { None },
            })
            .collect();
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeDecl {
                id: n.id.clone(),
                cadence: n.cadence,
            })
            .collect();
        let movements = self
            .movements
            .iter()
            .map(|m| MovementDecl {
                id: Some(m.id.clone()),
                from: self.arcs[m.from_arc.0].id.clone(),
                to: self.arcs[m.to_arc.0].id.clone(),
                split: Some(self.arcs[m.from_arc.0].splits[m.from_commodity].clone()),
                c: m.c,
            })
            .collect();
        let phases = self
            .nodes
            .iter()
            .flat_map(|n| {
                n.phases.iter().map(|p| PhaseDecl {
                    node: n.id.clone(),
                    id: Some(p.id.clone()),
                    movements: p
                        .movements
                        .iter()
                        .map(|&m| self.movements[m.0].id.clone())
                        .collect(),
                })
            })
            .collect();
        let arrivals = self
            .arrivals
            .iter()
            .map(|b| {
                let arc = &self.arcs[b.arc.0];
                ArrivalDecl {
                    arc: arc.id.clone(),
                    to: arc.commodities[b.commodity]
                        .to_arc
                        .map(|t| self.arcs[t.0].id.clone()),
                    rate: b.rate.clone(),
                    process: b.process,
                    position: None,
                }
            })
            .collect();
        let initial = self
            .initial
            .iter()
            .map(|b| {
                let arc = &self.arcs[b.arc.0];
                InitialDecl {
                    arc: arc.id.clone(),
                    density: b.density,
                    from_m: b.range.map(|r| r.0),
                    to_m: b.range.map(|r| r.1),
                    to_arc: b
                        .commodity
                        .and_then(|k| arc.commodities[k].to_arc)
                        .map(|t| self.arcs[t.0].id.clone()),
                }
            })
            .collect();
        let incidents = self
            .incidents
            .iter()
            .map(|b| IncidentDecl {
                arc: self.arcs[b.arc.0].id.clone(),
                cells: b.cells,
                start: b.start,
                end: b.end,
                lanes_blocked: b.lanes_blocked,
            })
            .collect();
        ConfigDocument {
            schema_version: crate::config::SCHEMA_VERSION,
            sim: self.sim.clone(),
            arcs,
            nodes,
            movements,
            phases,
            arrivals,
            initial,
            incidents,
            controller: self.controller.clone(),
            recovery: self.recovery.clone(),
        }
    }
}

/// Build the solver graph from a config document, expanding implicit
/// sources first. All structural validation lives here.
pub fn build_network(doc: &ConfigDocument) -> Result<NetworkGraph, BuildError> {
    let expanded = expand_document(doc)?;
    assemble(&expanded)
}

/// Normalize ids and insert the source arcs implied by arrival
/// declarations. Public mainly for tests; [`build_network`] calls it.
pub fn expand_document(doc: &ConfigDocument) -> Result<ConfigDocument, BuildError> {
    let mut doc = doc.clone();

    // Concretize movement and phase ids up front so the rewrites below
    // cannot change them.
    for m in &mut doc.movements {
        if m.id.is_none() {
            m.id = Some(format!("{}->{}", m.from, m.to));
        }
    }
    let mut per_node_count: HashMap<String, usize> = HashMap::new();
    for p in &mut doc.phases {
        let n = per_node_count.entry(p.node.clone()).or_insert(0);
        if p.id.is_none() {
            p.id = Some(format!("{}/{}", p.node, n));
        }
        *n += 1;
    }

    let mut split_arcs: HashSet<String> = HashSet::new();
    for ai in 0..doc.arrivals.len() {
        let target_id = doc.arrivals[ai].arc.clone();
        let Some(arc_pos) = doc.arcs.iter().position(|a| a.id == target_id) else {
            return Err(BuildError::UnknownRef {
                kind: "arc",
                id: target_id,
                referrer: "arrival".into(),
            });
        };
        if doc.arcs[arc_pos].source {
            continue; // already a source; binding resolved later
        }
        match doc.arrivals[ai].position {
            None => {
                // Boundary inflow: prepend source arc + injection node.
                if doc.arcs[arc_pos].from.is_some() {
                    return Err(BuildError::BadArrival {
                        arc: target_id,
                        reason: "arc has an upstream node; interior arrivals need `position`"
                            .into(),
                    });
                }
                let node_id = fresh_id(&doc, &format!("in/{target_id}"))?;
                let src_id = fresh_id(&doc, &format!("src/{target_id}"))?;
                doc.nodes.push(NodeDecl {
                    id: node_id.clone(),
                    cadence: 10.0,
                });
                doc.arcs.push(source_decl(&src_id, &node_id));
                doc.arcs[arc_pos].from = Some(node_id.clone());
                let mov_id = format!("{src_id}->{target_id}");
                doc.movements.push(MovementDecl {
                    id: Some(mov_id.clone()),
                    from: src_id.clone(),
                    to: target_id.clone(),
                    split: None,
                    c: 1.0,
                });
                doc.phases.push(PhaseDecl {
                    node: node_id.clone(),
                    id: Some(format!("{node_id}/0")),
                    movements: vec![mov_id],
                });
                let arrival = &mut doc.arrivals[ai];
                arrival.arc = src_id;
                arrival.to = Some(target_id);
            }
            Some(p) => {
                // Interior inflow: split the host arc and merge the source
                // in at an unsignalized node.
                let host = doc.arcs[arc_pos].clone();
                if p <= 0.0 || p >= host.length {
                    return Err(BuildError::BadArrival {
                        arc: target_id,
                        reason: format!(
                            "position {p} m outside the open interval (0, {})",
                            host.length
                        ),
                    });
                }
                if !split_arcs.insert(target_id.clone()) {
                    return Err(BuildError::BadArrival {
                        arc: target_id,
                        reason: "at most one interior arrival per arc".into(),
                    });
                }
                if doc.incidents.iter().any(|i| i.arc == target_id) {
                    return Err(BuildError::BadIncident {
                        arc: target_id,
                        reason: "incidents on an arc split by an interior arrival are not \
                                 supported (cell indices would be ambiguous)"
                            .into(),
                    });
                }
                let down_id = fresh_id(&doc, &format!("{target_id}/dn"))?;
                let merge_id = fresh_id(&doc, &format!("merge/{target_id}"))?;
                let src_id = fresh_id(&doc, &format!("src/{down_id}"))?;

                doc.arcs[arc_pos].length = p;
                doc.arcs[arc_pos].to = Some(merge_id.clone());
                let mut down = host.clone();
                down.id = down_id.clone();
                down.length = host.length - p;
                down.from = Some(merge_id.clone());
                doc.arcs.push(down);

                // Movements leaving the host now leave the downstream half.
                for m in &mut doc.movements {
                    if m.from == target_id {
                        m.from = down_id.clone();
                    }
                }

                doc.nodes.push(NodeDecl {
                    id: merge_id.clone(),
                    cadence: 10.0,
                });
                doc.arcs.push(source_decl(&src_id, &merge_id));
                let through_id = format!("{target_id}->{down_id}");
                let inject_id = format!("{src_id}->{down_id}");
                doc.movements.push(MovementDecl {
                    id: Some(through_id.clone()),
                    from: target_id.clone(),
                    to: down_id.clone(),
                    split: None,
                    c: 1.0,
                });
                doc.movements.push(MovementDecl {
                    id: Some(inject_id.clone()),
                    from: src_id.clone(),
                    to: down_id.clone(),
                    split: None,
                    c: 1.0,
                });
                doc.phases.push(PhaseDecl {
                    node: merge_id.clone(),
                    id: Some(format!("{merge_id}/0")),
                    movements: vec![through_id, inject_id],
                });

                // Re-home initial-condition blocks to the two halves.
                let mut reassigned = Vec::new();
                for init in &doc.initial {
                    if init.arc != target_id {
                        reassigned.push(init.clone());
                        continue;
                    }
                    let (f, t) = (
                        init.from_m.unwrap_or(0.0),
                        init.to_m.unwrap_or(host.length),
                    );
                    if f < p {
                        reassigned.push(InitialDecl {
                            arc: target_id.clone(),
                            density: init.density,
                            from_m: Some(f),
                            to_m: Some(t.min(p)),
                            // The upstream half has a single successor; the
                            // original destination label re-forms at the
                            // downstream half's entry.
                            to_arc: None,
                        });
                    }
                    if t > p {
                        reassigned.push(InitialDecl {
                            arc: down_id.clone(),
                            density: init.density,
                            from_m: Some(f.max(p) - p),
                            to_m: Some(t - p),
                            to_arc: init.to_arc.clone(),
                        });
                    }
                }
                doc.initial = reassigned;

                let arrival = &mut doc.arrivals[ai];
                arrival.arc = src_id;
                arrival.to = Some(down_id);
                arrival.position = None;
            }
        }
    }
    Ok(doc)
}

fn source_decl(id: &str, to_node: &str) -> ArcDecl {
    ArcDecl {
        id: id.to_string(),
        from: None,
        to: Some(to_node.to_string()),
        source: true,
        length: 0.0,
        lanes: 1.0,
        v_free: 15.0,
        wave_speed: 5.0,
        jam_density: 0.15,
        cv_v_free: 0.0,
        cv_wave_speed: 0.0,
        cv_jam_density: 0.0,
        q_max: None,
    }
}

fn fresh_id(doc: &ConfigDocument, wanted: &str) -> Result<String, BuildError> {
    let taken = doc.arcs.iter().any(|a| a.id == wanted)
        || doc.nodes.iter().any(|n| n.id == wanted);
    if taken {
        Err(BuildError::DuplicateId {
            kind: "generated id",
            id: wanted.to_string(),
        })
    } else {
        Ok(wanted.to_string())
    }
}

fn assemble(doc: &ConfigDocument) -> Result<NetworkGraph, BuildError> {
    // --- nodes ---
    let mut node_index = HashMap::new();
    for (i, n) in doc.nodes.iter().enumerate() {
        if node_index.insert(n.id.clone(), NodeIdx(i)).is_some() {
            return Err(BuildError::DuplicateId {
                kind: "node",
                id: n.id.clone(),
            });
        }
        if !(n.cadence > 0.0) {
            return Err(BuildError::NonPositiveCadence {
                node: n.id.clone(),
                cadence: n.cadence,
            });
        }
    }

    // --- arcs ---
    let mut arc_index = HashMap::new();
    let mut arcs: Vec<Arc> = Vec::with_capacity(doc.arcs.len());
    for (i, a) in doc.arcs.iter().enumerate() {
        if arc_index.insert(a.id.clone(), ArcIdx(i)).is_some() {
            return Err(BuildError::DuplicateId {
                kind: "arc",
                id: a.id.clone(),
            });
        }
        let resolve_node = |id: &Option<String>| -> Result<Option<NodeIdx>, BuildError> {
            match id {
                None => Ok(None),
                Some(id) => node_index
                    .get(id)
                    .copied()
                    .map(Some)
                    .ok_or_else(|| BuildError::UnknownRef {
                        kind: "node",
                        id: id.clone(),
                        referrer: format!("arc `{}`", a.id),
                    }),
            }
        };
        let from = resolve_node(&a.from)?;
        let to = resolve_node(&a.to)?;
        for (what, value) in [
            ("lanes", a.lanes),
            ("v_free", a.v_free),
            ("wave_speed", a.wave_speed),
            ("jam_density", a.jam_density),
        ] {
            if !(value > 0.0) {
                return Err(BuildError::NonPositiveParam {
                    arc: a.id.clone(),
                    what,
                    value,
                });
            }
        }
        if a.source {
            if to.is_none() {
                return Err(BuildError::Other(format!(
                    "source arc `{}` must name the node it feeds (`to`)",
                    a.id
                )));
            }
            if from.is_some() {
                return Err(BuildError::Other(format!(
                    "source arc `{}` cannot have an upstream node",
                    a.id
                )));
            }
        } else if !(a.length > 0.0) {
            return Err(BuildError::NonPositiveParam {
                arc: a.id.clone(),
                what: "length",
                value: a.length,
            });
        }
        let (cell_count, dx) = if a.source {
            (0, 0.0)
        } else {
            let n = ((a.length / doc.sim.cell_target_length).round() as usize).max(1);
            (n, a.length / n as f64)
        };
        let mut fd = FundamentalDiagram::new(a.v_free, a.wave_speed, a.jam_density);
        fd.cv_v_free = a.cv_v_free;
        fd.cv_wave_speed = a.cv_wave_speed;
        fd.cv_jam_density = a.cv_jam_density;
        arcs.push(Arc {
            id: a.id.clone(),
            from,
            to,
            is_source: a.source,
            length: if a.source { 0.0 } else { a.length },
            lanes: a.lanes,
            fd,
            q_max_source: 0.0, // resolved after movements exist
            cell_count,
            dx,
            commodities: Vec::new(),
            splits: Vec::new(),
            incoming: Vec::new(),
            outgoing: Vec::new(),
        });
    }

    // --- movements ---
    let mut movement_index = HashMap::new();
    let mut movements: Vec<Movement> = Vec::with_capacity(doc.movements.len());
    let mut seen_pairs = HashSet::new();
    for m in &doc.movements {
        let id = m.id.clone().unwrap_or_else(|| format!("{}->{}", m.from, m.to));
        let lookup = |arc_id: &str| -> Result<ArcIdx, BuildError> {
            arc_index
                .get(arc_id)
                .copied()
                .ok_or_else(|| BuildError::UnknownRef {
                    kind: "arc",
                    id: arc_id.to_string(),
                    referrer: format!("movement `{id}`"),
                })
        };
        let from_arc = lookup(&m.from)?;
        let to_arc = lookup(&m.to)?;
        if !seen_pairs.insert((from_arc, to_arc)) {
            return Err(BuildError::DuplicateId {
                kind: "movement",
                id: format!("{}->{}", m.from, m.to),
            });
        }
        if arcs[to_arc.0].is_source {
            return Err(BuildError::Other(format!(
                "movement `{id}` targets source arc `{}`",
                m.to
            )));
        }
        let from_end = arcs[from_arc.0].to;
        let to_start = arcs[to_arc.0].from;
        let node = match (from_end, to_start) {
            (Some(n1), Some(n2)) if n1 == n2 => n1,
            _ => {
                let name = |n: Option<NodeIdx>| {
                    n.map(|i| doc.nodes[i.0].id.clone())
                        .unwrap_or_else(|| "<none>".into())
                };
                return Err(BuildError::MovementNodeMismatch {
                    movement: id,
                    from_arc: m.from.clone(),
                    from_end: name(from_end),
                    to_arc: m.to.clone(),
                    to_start: name(to_start),
                });
            }
        };
        if !(m.c > 0.0) {
            return Err(BuildError::Other(format!(
                "movement `{id}`: weight constant c must be positive (got {})",
                m.c
            )));
        }
        if let Some(split) = &m.split {
            split.validate(&format!("movement `{id}` split"))?;
        }
        let mi = MovIdx(movements.len());
        if movement_index.insert(id.clone(), mi).is_some() {
            return Err(BuildError::DuplicateId {
                kind: "movement",
                id,
            });
        }
        movements.push(Movement {
            id,
            from_arc,
            to_arc,
            node,
            c: m.c,
            from_commodity: usize::MAX, // filled below
            sat_flow: 0.0,              // filled below
        });
    }

    // --- commodities, splits, adjacency ---
    for (mi, m) in movements.iter().enumerate() {
        arcs[m.from_arc.0].outgoing.push(MovIdx(mi));
        arcs[m.to_arc.0].incoming.push(MovIdx(mi));
    }
    for (ai, arc) in arcs.iter_mut().enumerate() {
        if arc.outgoing.is_empty() {
            if !arc.is_source {
                // Exit arc: one sink stream.
                arc.commodities.push(Commodity { to_arc: None });
                arc.splits.push(Profile::Constant(1.0));
            }
            continue;
        }
        let n = arc.outgoing.len();
        let mut breakpoints: Vec<f64> = vec![0.0];
        for &mv in &arc.outgoing {
            arc.commodities.push(Commodity {
                to_arc: Some(movements[mv.0].to_arc),
            });
            let split = doc.movements[mv.0]
                .split
                .clone()
                .unwrap_or(Profile::Constant(1.0 / n as f64));
            breakpoints.extend(split.breakpoints());
            arc.splits.push(split);
        }
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        for &t in &breakpoints {
            let sum: f64 = arc.splits.iter().map(|p| p.value_at(t)).sum();
            if (sum - 1.0).abs() > SPLIT_SUM_TOL {
                return Err(BuildError::SplitSum {
                    arc: doc.arcs[ai].id.clone(),
                    sum,
                    time: t,
                });
            }
            for p in &arc.splits {
                if p.value_at(t) < 0.0 {
                    return Err(BuildError::SplitSum {
                        arc: doc.arcs[ai].id.clone(),
                        sum,
                        time: t,
                    });
                }
            }
        }
    }
    for (mi, movement) in movements.iter_mut().enumerate() {
        let from = movement.from_arc;
        let k = arcs[from.0]
            .outgoing
            .iter()
            .position(|&mv| mv == MovIdx(mi))
            .expect("movement listed in its from-arc");
        movement.from_commodity = k;
    }

    // --- source discharge caps, then queue-model service rates ---
    for arc in arcs.iter_mut().filter(|a| a.is_source) {
        if arc.outgoing.is_empty() {
            return Err(BuildError::Other(format!(
                "source arc `{}` has no movements",
                arc.id
            )));
        }
    }
    let source_caps: Vec<f64> = arcs
        .iter()
        .enumerate()
        .map(|(ai, arc)| {
            if !arc.is_source {
                return 0.0;
            }
            doc.arcs[ai].q_max.unwrap_or_else(|| {
                let widest = arc
                    .outgoing
                    .iter()
                    .map(|&mv| arcs[movements[mv.0].to_arc.0].lanes)
                    .fold(0.0, f64::max);
                doc.sim.source_q_max_per_lane * widest
            })
        })
        .collect();
    for (arc, cap) in arcs.iter_mut().zip(&source_caps) {
        arc.q_max_source = *cap;
        if arc.is_source && !(arc.q_max_source > 0.0) {
            return Err(BuildError::NonPositiveParam {
                arc: arc.id.clone(),
                what: "q_max",
                value: arc.q_max_source,
            });
        }
    }
    let capacity = |arc: &Arc| -> f64 {
        if arc.is_source {
            arc.q_max_source
        } else {
            arc.fd.q_max() * arc.lanes
        }
    };
    for mi in 0..movements.len() {
        let from_cap = capacity(&arcs[movements[mi].from_arc.0]);
        let to_cap = capacity(&arcs[movements[mi].to_arc.0]);
        movements[mi].sat_flow = from_cap.min(to_cap);
    }

    // --- nodes: movements and phases ---
    let mut nodes: Vec<Node> = doc
        .nodes
        .iter()
        .map(|n| Node {
            id: n.id.clone(),
            cadence: n.cadence,
            movements: Vec::new(),
            phases: Vec::new(),
        })
        .collect();
    for (mi, m) in movements.iter().enumerate() {
        nodes[m.node.0].movements.push(MovIdx(mi));
    }
    for p in &doc.phases {
        let Some(&ni) = node_index.get(&p.node) else {
            return Err(BuildError::UnknownRef {
                kind: "node",
                id: p.node.clone(),
                referrer: "phase".into(),
            });
        };
        let id = p
            .id
            .clone()
            .unwrap_or_else(|| format!("{}/{}", p.node, nodes[ni.0].phases.len()));
        if nodes[ni.0].phases.iter().any(|ph| ph.id == id) {
            return Err(BuildError::DuplicateId { kind: "phase", id });
        }
        let mut phase_movements = Vec::with_capacity(p.movements.len());
        for mid in &p.movements {
            let Some(&mv) = movement_index.get(mid) else {
                return Err(BuildError::UnknownRef {
                    kind: "movement",
                    id: mid.clone(),
                    referrer: format!("phase `{id}`"),
                });
            };
            if movements[mv.0].node != ni {
                return Err(BuildError::PhaseMovementElsewhere {
                    phase: id,
                    node: p.node.clone(),
                    movement: mid.clone(),
                    movement_node: nodes[movements[mv.0].node.0].id.clone(),
                });
            }
            phase_movements.push(mv);
        }
        nodes[ni.0].phases.push(Phase {
            id,
            movements: phase_movements,
        });
    }
    for node in &nodes {
        if node.movements.is_empty() {
            return Err(BuildError::NoMovements {
                node: node.id.clone(),
            });
        }
        if node.phases.is_empty() {
            return Err(BuildError::NoPhases {
                node: node.id.clone(),
            });
        }
    }

    // --- reachability ---
    for arc in arcs.iter().filter(|a| !a.is_source) {
        if arc.incoming.is_empty() {
            return Err(BuildError::UnreachableArc { arc: arc.id.clone() });
        }
    }

    // --- step selection ---
    let cfl = arcs
        .iter()
        .filter(|a| !a.is_source)
        .map(|a| a.dx / a.fd.v_free.max(a.fd.wave_speed))
        .fold(f64::INFINITY, f64::min);
    if !(doc.sim.horizon > 0.0) {
        return Err(BuildError::Other(format!(
            "sim.horizon must be positive (got {})",
            doc.sim.horizon
        )));
    }
    let dt = if doc.sim.dt > 0.0 {
        if doc.sim.dt > cfl {
            let blame = arcs
                .iter()
                .filter(|a| !a.is_source)
                .min_by(|a, b| {
                    let ba = a.dx / a.fd.v_free.max(a.fd.wave_speed);
                    let bb = b.dx / b.fd.v_free.max(b.fd.wave_speed);
                    ba.total_cmp(&bb)
                })
                .expect("physical arc exists");
            return Err(BuildError::CflViolation {
                arc: blame.id.clone(),
                dt: doc.sim.dt,
                bound: cfl,
                dx: blame.dx,
            });
        }
        doc.sim.dt
    } else {
        if !cfl.is_finite() {
            return Err(BuildError::Other(
                "network has no physical arcs; cannot choose a step".into(),
            ));
        }
        CFL_SAFETY * cfl
    };

    // --- arrivals ---
    let mut arrivals = Vec::with_capacity(doc.arrivals.len());
    let mut seen_arrivals = HashSet::new();
    for a in &doc.arrivals {
        let Some(&arc) = arc_index.get(&a.arc) else {
            return Err(BuildError::UnknownRef {
                kind: "arc",
                id: a.arc.clone(),
                referrer: "arrival".into(),
            });
        };
        if !arcs[arc.0].is_source {
            return Err(BuildError::BadArrival {
                arc: a.arc.clone(),
                reason: "arrivals bind to source arcs (boundary arcs are expanded automatically)"
                    .into(),
            });
        }
        let commodity = match &a.to {
            Some(to_id) => {
                let Some(&to) = arc_index.get(to_id) else {
                    return Err(BuildError::UnknownRef {
                        kind: "arc",
                        id: to_id.clone(),
                        referrer: format!("arrival on `{}`", a.arc),
                    });
                };
                arcs[arc.0].commodity_to(to).ok_or_else(|| BuildError::BadArrival {
                    arc: a.arc.clone(),
                    reason: format!("source has no movement to `{to_id}`"),
                })?
            }
            None => {
                if arcs[arc.0].commodities.len() != 1 {
                    return Err(BuildError::BadArrival {
                        arc: a.arc.clone(),
                        reason: "source has several movements; arrival needs `to`".into(),
                    });
                }
                0
            }
        };
        if !seen_arrivals.insert((arc, commodity)) {
            return Err(BuildError::BadArrival {
                arc: a.arc.clone(),
                reason: "multiple arrival processes for one commodity".into(),
            });
        }
        a.rate.validate(&format!("arrival rate on `{}`", a.arc))?;
        for t in a.rate.breakpoints() {
            if a.rate.value_at(t) < 0.0 {
                return Err(BuildError::BadArrival {
                    arc: a.arc.clone(),
                    reason: format!("negative rate at t = {t}"),
                });
            }
        }
        arrivals.push(ArrivalBinding {
            arc,
            commodity,
            rate: a.rate.clone(),
            process: a.process,
        });
    }

    // --- initial conditions ---
    let mut initial = Vec::with_capacity(doc.initial.len());
    for b in &doc.initial {
        let Some(&arc) = arc_index.get(&b.arc) else {
            return Err(BuildError::UnknownRef {
                kind: "arc",
                id: b.arc.clone(),
                referrer: "initial condition".into(),
            });
        };
        if b.density < 0.0 {
            return Err(BuildError::BadInitial {
                arc: b.arc.clone(),
                reason: format!("negative density {}", b.density),
            });
        }
        let arc_ref = &arcs[arc.0];
        let range = if arc_ref.is_source {
            if b.from_m.is_some() || b.to_m.is_some() {
                return Err(BuildError::BadInitial {
                    arc: b.arc.clone(),
                    reason: "spatial range on a point-queue source".into(),
                });
            }
            None
        } else {
            let f = b.from_m.unwrap_or(0.0);
            let t = b.to_m.unwrap_or(arc_ref.length);
            if !(0.0..=arc_ref.length).contains(&f) || t > arc_ref.length || f >= t {
                return Err(BuildError::BadInitial {
                    arc: b.arc.clone(),
                    reason: format!("bad range [{f}, {t}) on arc of length {}", arc_ref.length),
                });
            }
            Some((f, t))
        };
        let commodity = match &b.to_arc {
            None => None,
            Some(to_id) => {
                let Some(&to) = arc_index.get(to_id) else {
                    return Err(BuildError::UnknownRef {
                        kind: "arc",
                        id: to_id.clone(),
                        referrer: format!("initial condition on `{}`", b.arc),
                    });
                };
                Some(arc_ref.commodity_to(to).ok_or_else(|| BuildError::BadInitial {
                    arc: b.arc.clone(),
                    reason: format!("arc has no commodity headed to `{to_id}`"),
                })?)
            }
        };
        initial.push(InitialBinding {
            arc,
            commodity,
            density: b.density,
            range,
        });
    }

    // --- incidents ---
    let mut incidents = Vec::with_capacity(doc.incidents.len());
    for inc in &doc.incidents {
        let Some(&arc) = arc_index.get(&inc.arc) else {
            return Err(BuildError::UnknownRef {
                kind: "arc",
                id: inc.arc.clone(),
                referrer: "incident".into(),
            });
        };
        let arc_ref = &arcs[arc.0];
        if arc_ref.is_source {
            return Err(BuildError::BadIncident {
                arc: inc.arc.clone(),
                reason: "incidents apply to physical arcs".into(),
            });
        }
        if inc.cells.0 > inc.cells.1 || inc.cells.1 >= arc_ref.cell_count {
            return Err(BuildError::BadIncident {
                arc: inc.arc.clone(),
                reason: format!(
                    "cell range [{}, {}] outside 0..{}",
                    inc.cells.0,
                    inc.cells.1,
                    arc_ref.cell_count
                ),
            });
        }
        if !(inc.start < inc.end) {
            return Err(BuildError::BadIncident {
                arc: inc.arc.clone(),
                reason: format!("window [{}, {}) is empty", inc.start, inc.end),
            });
        }
        if inc.lanes_blocked < 0.0 || inc.lanes_blocked > arc_ref.lanes {
            return Err(BuildError::BadIncident {
                arc: inc.arc.clone(),
                reason: format!(
                    "lanes_blocked {} outside [0, {}]",
                    inc.lanes_blocked, arc_ref.lanes
                ),
            });
        }
        let binding = IncidentBinding {
            arc,
            cells: inc.cells,
            start: inc.start,
            end: inc.end,
            factor: 1.0 - inc.lanes_blocked / arc_ref.lanes,
            lanes_blocked: inc.lanes_blocked,
        };
        for prev in &incidents {
            let prev: &IncidentBinding = prev;
            let cells_overlap =
                prev.arc == arc && prev.cells.0 <= inc.cells.1 && inc.cells.0 <= prev.cells.1;
            let time_overlap = prev.start < inc.end && inc.start < prev.end;
            if cells_overlap && time_overlap {
                return Err(BuildError::BadIncident {
                    arc: inc.arc.clone(),
                    reason: "overlaps another incident on the same cells".into(),
                });
            }
        }
        incidents.push(binding);
    }

    // --- fixed-time plans (shape checks only; the controller consumes them) ---
    let mut planned_nodes = HashSet::new();
    for plan in &doc.controller.fixed_time {
        let Some(&ni) = node_index.get(&plan.node) else {
            return Err(BuildError::UnknownRef {
                kind: "node",
                id: plan.node.clone(),
                referrer: "fixed_time plan".into(),
            });
        };
        if !planned_nodes.insert(ni) {
            return Err(BuildError::BadFixedTimePlan {
                node: plan.node.clone(),
                reason: "multiple plans for one node".into(),
            });
        }
        if plan.durations.len() != nodes[ni.0].phases.len() {
            return Err(BuildError::BadFixedTimePlan {
                node: plan.node.clone(),
                reason: format!(
                    "{} durations for {} phases",
                    plan.durations.len(),
                    nodes[ni.0].phases.len()
                ),
            });
        }
        // A zero entry skips that phase; the cycle as a whole must have
        // length.
        if plan.durations.iter().any(|&d| !(d >= 0.0)) {
            return Err(BuildError::BadFixedTimePlan {
                node: plan.node.clone(),
                reason: "durations must be non-negative".into(),
            });
        }
        if !(plan.durations.iter().sum::<f64>() > 0.0) {
            return Err(BuildError::BadFixedTimePlan {
                node: plan.node.clone(),
                reason: "cycle length must be positive".into(),
            });
        }
        if !plan.offset.is_finite() {
            return Err(BuildError::BadFixedTimePlan {
                node: plan.node.clone(),
                reason: "offset must be finite".into(),
            });
        }
    }

    if doc.controller.mc_samples == 0 {
        return Err(BuildError::Other(
            "controller.mc_samples must be at least 1".into(),
        ));
    }
    if doc.sim.metrics_stride == 0 || doc.sim.lyapunov_stride == 0 {
        return Err(BuildError::Other("strides must be at least 1".into()));
    }

    Ok(NetworkGraph {
        arcs,
        nodes,
        movements,
        arrivals,
        incidents,
        initial,
        dt,
        sim: doc.sim.clone(),
        controller: doc.controller.clone(),
        recovery: doc.recovery.clone(),
        arc_index,
        node_index,
        movement_index,
    })
}
