//! Phase-selection policies.
//!
//! Every signalized node re-decides its phase on its own cadence, from a
//! frozen state snapshot, independently of all other nodes. Four policies
//! are provided:
//!
//! - **Position-weighted pressure** ([`PolicyKind::Pwbp`]): each movement
//!   gets a weight comparing position-weighted upstream mass (mass near
//!   the stop line counts more) against position-weighted downstream mass
//!   (mass near the downstream entry counts more, discounted by turn
//!   fractions); the phase maximizing Σ weight × expected movement flux
//!   wins. Blocked movements contribute nothing regardless of weight.
//! - **Queue-difference pressure** ([`PolicyKind::Bp`]): classic
//!   position-blind max-pressure on total queue counts, scored against
//!   saturation rates, so spatial blocking is invisible to it.
//! - **Capacity-aware pressure** ([`PolicyKind::Cabp`]): the same, except
//!   a movement's weight is zeroed when its downstream arc has less than
//!   one vehicle of remaining storage.
//! - **Fixed time** ([`PolicyKind::FixedTime`]): a cyclic plan sampled at
//!   the node's cadence, ignoring state.
//!
//! Exact score ties are broken uniformly at random (detected with a
//! `1e-12` relative tolerance) from a per-node substream, so randomized
//! tie-breaking is reproducible and independent of evaluation order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::PolicyKind;
use crate::error::BuildError;
use crate::exec::{ordered_map, Parallelism};
use crate::network::{ArcIdx, MovIdx, NetworkGraph, NodeIdx};
use crate::node_model::{expected_node_flux, FdDrawSet, IncidentMap, SourceExtra};
use crate::rng::{substream, StreamKind};
use crate::state::{NetworkState, SignalState};

/// Relative tolerance under which two phase scores count as an exact tie.
pub const TIE_REL_TOL: f64 = 1e-12;

/// How the pressure weight locates mass along an arc.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum PositionWeighting {
    /// Linear position factors evaluated at cell centers (the real
    /// controller): `x/l` upstream, `(l − x)/l` downstream.
    #[default]
    CellCenters,
    /// Test-only: both factors forced to 1, as if all mass sat at the
    /// stop line / the downstream entry. Collapses the weight to the
    /// point-queue difference `|c·Q_up − Σ c·π·Q_down|`.
    EndpointCollapse,
}

/// `Σ_i factor(x_i) · ρ[commodity][i] · Δx` over the cells of a physical
/// arc — the position-weighted vehicle count of one commodity.
fn weighted_mass<F: Fn(f64, f64) -> f64>(
    graph: &NetworkGraph,
    state: &NetworkState,
    arc: ArcIdx,
    commodity: usize,
    factor: F,
) -> f64 {
    let a = graph.arc(arc);
    let row = &state.arcs[arc.0].rows[commodity];
    let mut sum = 0.0;
    for (i, rho) in row.iter().enumerate() {
        sum += factor(a.cell_x(i), a.length) * rho;
    }
    sum * a.dx
}

/// Turn-fraction-discounted, position-weighted vehicle count on the
/// downstream arc of a movement: `Σ_c π_c(t) · c_c · ⟨(l−x)/l · ρ^c⟩`.
fn downstream_pressure(
    graph: &NetworkGraph,
    state: &NetworkState,
    arc: ArcIdx,
    t: f64,
    weighting: PositionWeighting,
) -> f64 {
    let a = graph.arc(arc);
    (0..a.commodities.len())
        .map(|k| {
            let pi = graph.split_at(arc, k, t);
            let c = graph.commodity_constant(arc, k);
            let mass = match weighting {
                PositionWeighting::CellCenters => {
                    weighted_mass(graph, state, arc, k, |x, l| (l - x) / l)
                }
                PositionWeighting::EndpointCollapse => {
                    weighted_mass(graph, state, arc, k, |_, _| 1.0)
                }
            };
            pi * c * mass
        })
        .sum()
}

/// Position-weighted pressure of one movement: |upstream − downstream|,
/// where upstream is the point queue (source arcs) or the stop-line-
/// weighted commodity mass, and downstream discounts by turn fractions.
pub fn pwbp_weight(
    graph: &NetworkGraph,
    state: &NetworkState,
    m: MovIdx,
    t: f64,
    weighting: PositionWeighting,
) -> f64 {
    let mv = graph.movement(m);
    let up = if graph.arc(mv.from_arc).is_source {
        mv.c * state.arcs[mv.from_arc.0].queue(mv.from_commodity)
    } else {
        let mass = match weighting {
            PositionWeighting::CellCenters => {
                weighted_mass(graph, state, mv.from_arc, mv.from_commodity, |x, l| x / l)
            }
            PositionWeighting::EndpointCollapse => {
                weighted_mass(graph, state, mv.from_arc, mv.from_commodity, |_, _| 1.0)
            }
        };
        mv.c * mass
    };
    let down = downstream_pressure(graph, state, mv.to_arc, t, weighting);
    (up - down).abs()
}

/// Total vehicles of one commodity on an arc (queue count for sources).
fn commodity_vehicles(graph: &NetworkGraph, state: &NetworkState, arc: ArcIdx, k: usize) -> f64 {
    if graph.arc(arc).is_source {
        state.arcs[arc.0].queue(k)
    } else {
        state.arcs[arc.0].rows[k].iter().sum::<f64>() * graph.arc(arc).dx
    }
}

/// Position-blind queue-difference pressure:
/// `max(0, Q_up − Σ_c π_c(t)·Q_down^c)` on total vehicle counts.
pub fn bp_weight(graph: &NetworkGraph, state: &NetworkState, m: MovIdx, t: f64) -> f64 {
    let mv = graph.movement(m);
    let up = commodity_vehicles(graph, state, mv.from_arc, mv.from_commodity);
    let b = graph.arc(mv.to_arc);
    let down: f64 = (0..b.commodities.len())
        .map(|k| graph.split_at(mv.to_arc, k, t) * commodity_vehicles(graph, state, mv.to_arc, k))
        .sum();
    (up - down).max(0.0)
}

/// Queue-difference pressure gated on downstream storage: zero whenever
/// the downstream arc has less than one vehicle of spare capacity.
pub fn cabp_weight(graph: &NetworkGraph, state: &NetworkState, m: MovIdx, t: f64) -> f64 {
    let mv = graph.movement(m);
    let b = graph.arc(mv.to_arc);
    let occupied: f64 = (0..b.commodities.len())
        .map(|k| commodity_vehicles(graph, state, mv.to_arc, k))
        .sum();
    if b.capacity_veh() - occupied < 1.0 {
        0.0
    } else {
        bp_weight(graph, state, m, t)
    }
}

/// A cyclic signal plan: phase `i` holds for `durations[i]` seconds,
/// shifted by `offset`, repeating with the cycle.
#[derive(Clone, Debug)]
pub struct FixedTimePlan {
    pub durations: Vec<f64>,
    pub offset: f64,
    cycle: f64,
}

impl FixedTimePlan {
    pub fn new(durations: Vec<f64>, offset: f64) -> FixedTimePlan {
        let cycle = durations.iter().sum();
        FixedTimePlan {
            durations,
            offset,
            cycle,
        }
    }

    /// Equal share of one cadence interval per phase.
    pub fn equal(phases: usize, cadence: f64) -> FixedTimePlan {
        FixedTimePlan::new(vec![cadence; phases], 0.0)
    }

    /// Phase index scheduled at absolute time `t`.
    pub fn phase_at(&self, t: f64) -> usize {
        let mut u = (t + self.offset).rem_euclid(self.cycle);
        for (i, d) in self.durations.iter().enumerate() {
            if u < *d {
                return i;
            }
            u -= d;
        }
        self.durations.len() - 1 // u landed on the cycle boundary
    }
}

/// One phase decision at one node, with the per-candidate scores kept
/// for auditing.
#[derive(Clone, Debug)]
pub struct ControlDecision {
    pub node: NodeIdx,
    pub time: f64,
    /// Index into the node's phase list.
    pub chosen: usize,
    /// Score of every candidate phase, in phase order.
    pub scores: Vec<f64>,
    /// More than one candidate tied for the maximum.
    pub tie: bool,
    /// P(demand ≤ supply) per movement in node order — populated by the
    /// expectation-scoring policy, empty otherwise.
    pub p_demand_limited: Vec<f64>,
}

/// Snapshot inputs shared by every decision in one controller tick.
#[derive(Copy, Clone)]
pub struct ControlCtx<'a> {
    pub graph: &'a NetworkGraph,
    pub incidents: &'a IncidentMap,
    pub time: f64,
    pub dt: f64,
    pub par: Parallelism,
}

/// Mean arrivals over one step, `rate(t)·dt` vehicles per source slot —
/// what the controller assumes will join each queue while it looks.
pub fn expected_source_extra(graph: &NetworkGraph, t: f64, dt: f64) -> Vec<Vec<f64>> {
    let mut extra: Vec<Vec<f64>> = graph
        .arcs
        .iter()
        .map(|a| vec![0.0; a.commodities.len()])
        .collect();
    for b in &graph.arrivals {
        extra[b.arc.0][b.commodity] += b.rate.value_at(t) * dt;
    }
    extra
}

/// Candidate scores for every phase of a node, plus the per-movement
/// demand-limited probabilities when the policy estimates expectations.
/// Pure in all inputs; safe to evaluate for many nodes in parallel.
pub fn phase_scores(
    ctx: &ControlCtx,
    state: &NetworkState,
    node: NodeIdx,
    policy: PolicyKind,
    weighting: PositionWeighting,
    draws: &FdDrawSet,
) -> (Vec<f64>, Vec<f64>) {
    let g = ctx.graph;
    let n = g.node(node);
    match policy {
        PolicyKind::FixedTime => (vec![0.0; n.phases.len()], Vec::new()),
        PolicyKind::Bp | PolicyKind::Cabp => {
            let w: Vec<f64> = n
                .movements
                .iter()
                .map(|&m| match policy {
                    PolicyKind::Bp => bp_weight(g, state, m, ctx.time),
                    _ => cabp_weight(g, state, m, ctx.time),
                })
                .collect();
            let scores = n
                .phases
                .iter()
                .map(|p| {
                    p.movements
                        .iter()
                        .map(|&m| {
                            let pos = n.movements.iter().position(|&nm| nm == m).unwrap();
                            w[pos] * g.movement(m).sat_flow
                        })
                        .sum()
                })
                .collect();
            (scores, Vec::new())
        }
        PolicyKind::Pwbp => {
            let w: Vec<f64> = n
                .movements
                .iter()
                .map(|&m| pwbp_weight(g, state, m, ctx.time, weighting))
                .collect();
            let extra = expected_source_extra(g, ctx.time, ctx.dt);
            let slot: SourceExtra = Some(&extra);
            let mut p_out = Vec::new();
            let scores = n
                .phases
                .iter()
                .enumerate()
                .map(|(pi, _)| {
                    let e = expected_node_flux(
                        g, state, node, pi, draws, ctx.incidents, ctx.time, ctx.dt, slot,
                    );
                    if p_out.is_empty() {
                        p_out = e.p_demand_limited.clone();
                    }
                    e.q.iter().zip(&w).map(|(q, wi)| wi * q).sum()
                })
                .collect();
            (scores, p_out)
        }
    }
}

/// Uniform choice among the (relative-tolerance) maximizers of `scores`.
/// Returns the chosen index and whether more than one candidate tied.
pub fn choose_among<R: Rng>(scores: &[f64], rng: &mut R) -> (usize, bool) {
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_REL_TOL * best.abs();
    let tied: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| best - **s <= tol)
        .map(|(i, _)| i)
        .collect();
    if tied.len() == 1 {
        (tied[0], false)
    } else {
        (tied[rng.gen_range(0..tied.len())], true)
    }
}

/// One node's phase decision under a policy. Fixed time reads the plan;
/// everything else enumerates candidate phases and randomizes exact ties.
#[allow(clippy::too_many_arguments)]
pub fn select_phase<R: Rng>(
    ctx: &ControlCtx,
    state: &NetworkState,
    node: NodeIdx,
    policy: PolicyKind,
    weighting: PositionWeighting,
    draws: &FdDrawSet,
    plan: Option<&FixedTimePlan>,
    rng: &mut R,
) -> ControlDecision {
    let (scores, p) = phase_scores(ctx, state, node, policy, weighting, draws);
    let (chosen, tie) = if policy == PolicyKind::FixedTime {
        let plan = plan.expect("fixed-time policy requires a plan for every signalized node");
        (plan.phase_at(ctx.time), false)
    } else {
        choose_among(&scores, rng)
    };
    ControlDecision {
        node,
        time: ctx.time,
        chosen,
        scores,
        tie,
        p_demand_limited: p,
    }
}

/// The per-run controller: policy, its expectation draws, per-node plans
/// and tie-break streams, and the position-weighting mode.
pub struct Controller {
    pub policy: PolicyKind,
    pub weighting: PositionWeighting,
    pub draws: FdDrawSet,
    plans: Vec<Option<FixedTimePlan>>,
    tie_rngs: Vec<ChaCha8Rng>,
}

impl Controller {
    /// Controller for the policy named in the graph's config.
    pub fn new(graph: &NetworkGraph, master_seed: u64) -> Result<Controller, BuildError> {
        Controller::with_policy(graph, graph.controller.policy, master_seed)
    }

    /// Controller with an explicit policy (e.g. a command-line override).
    pub fn with_policy(
        graph: &NetworkGraph,
        policy: PolicyKind,
        master_seed: u64,
    ) -> Result<Controller, BuildError> {
        let draws = if policy == PolicyKind::Pwbp
            && graph.arcs.iter().any(|a| a.fd.is_stochastic())
        {
            FdDrawSet::sampled(graph, graph.controller.mc_samples, master_seed)
        } else {
            FdDrawSet::deterministic(graph)
        };
        let mut plans: Vec<Option<FixedTimePlan>> = vec![None; graph.nodes.len()];
        for decl in &graph.controller.fixed_time {
            let n = graph.node_by_id(&decl.node).ok_or_else(|| BuildError::UnknownRef {
                kind: "node",
                id: decl.node.clone(),
                referrer: "fixed_time plan".into(),
            })?;
            plans[n.0] = Some(FixedTimePlan::new(decl.durations.clone(), decl.offset));
        }
        if policy == PolicyKind::FixedTime {
            // Signalized nodes without a declared plan cycle through their
            // phases with one cadence interval each.
            for (i, node) in graph.nodes.iter().enumerate() {
                if node.is_signalized() && plans[i].is_none() {
                    plans[i] = Some(FixedTimePlan::equal(node.phases.len(), node.cadence));
                }
            }
        }
        let tie_rngs = (0..graph.nodes.len())
            .map(|i| substream(master_seed, StreamKind::TieBreak, i as u64))
            .collect();
        Ok(Controller {
            policy,
            weighting: PositionWeighting::CellCenters,
            draws,
            plans,
            tie_rngs,
        })
    }

    pub fn plan(&self, node: NodeIdx) -> Option<&FixedTimePlan> {
        self.plans[node.0].as_ref()
    }

    /// Advance the signal assignment to time `ctx.time`: every signalized
    /// node whose cadence epoch has been reached re-decides; the rest hold.
    /// Scores are evaluated in parallel from the frozen state; choices,
    /// signal writes and probability-cache updates happen in node order, so
    /// output is identical across execution backends.
    pub fn tick(
        &mut self,
        ctx: &ControlCtx,
        state: &NetworkState,
        signals: &mut SignalState,
    ) -> Vec<ControlDecision> {
        let g = ctx.graph;
        let due: Vec<NodeIdx> = (0..g.nodes.len())
            .map(NodeIdx)
            .filter(|&n| {
                g.node(n).is_signalized()
                    && ctx.time >= signals.epochs[n.0] as f64 * g.node(n).cadence
            })
            .collect();
        if due.is_empty() {
            return Vec::new();
        }

        let (policy, weighting) = (self.policy, self.weighting);
        let draws = &self.draws;
        let scored = ordered_map(ctx.par, due.len(), |i| {
            phase_scores(ctx, state, due[i], policy, weighting, draws)
        });

        let mut decisions = Vec::with_capacity(due.len());
        for (&node, (scores, p)) in due.iter().zip(scored) {
            let (chosen, tie) = if self.policy == PolicyKind::FixedTime {
                let plan = self.plans[node.0]
                    .as_ref()
                    .expect("fixed-time plans exist for all signalized nodes");
                (plan.phase_at(ctx.time), false)
            } else {
                choose_among(&scores, &mut self.tie_rngs[node.0])
            };
            if chosen != signals.active[node.0] {
                signals.active[node.0] = chosen;
                signals.green_start[node.0] = ctx.time;
            }
            let cadence = ctx.graph.node(node).cadence;
            signals.epochs[node.0] = (ctx.time / cadence).floor() as u64 + 1;
            for (pos, &m) in ctx.graph.node(node).movements.iter().enumerate() {
                if let Some(&pv) = p.get(pos) {
                    self.draws.p_cache.insert(m, pv);
                }
            }
            decisions.push(ControlDecision {
                node,
                time: ctx.time,
                chosen,
                scores,
                tie,
                p_demand_limited: p,
            });
        }
        decisions
    }
}
