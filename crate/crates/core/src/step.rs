//! The simulation loop.
//!
//! One step is a synchronous network update: draw this step's arrivals,
//! let due nodes re-decide their phase, compute every movement flux from
//! the frozen pre-step state, then update all arcs — interior cells by a
//! first-order finite-volume rule, entries from movement inflows routed
//! through the turn fractions, exits by movement outflows or free
//! discharge off the network — and finally the source queues. Vehicle
//! count is conserved to rounding: each step reports its own mass-balance
//! error, and density bounds are checked after every update.
//!
//! Per-arc updates depend only on the movement-flux vector and the arc's
//! own rows, so they run in parallel; every reduction is ordered, making
//! output bit-identical across backends and thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::config::{ArrivalProcess, PolicyKind};
use crate::control::{ControlCtx, ControlDecision, Controller};
use crate::error::{BuildError, SimError};
use crate::exec::{for_each_mut, ordered_map, Parallelism};
use crate::fd::{startup_ramp, ArcFd};
use crate::network::NetworkGraph;
use crate::node_model::{realized_arc_fds, solve_node, FdView, IncidentMap};
use crate::rng::{substream_seed, StreamKind};
use crate::state::{NetworkState, SignalState};

/// Negative queue values closer to zero than this are rounding residue
/// from `q·Δt` round-trips and are clamped; anything worse is a bug and
/// surfaces through the bounds check.
const QUEUE_ROUNDING_GUARD: f64 = -1e-9;

/// What one step did, for auditing and metrics.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Time at the start of the step.
    pub time: f64,
    /// Vehicles that left the network, as a rate (veh/s).
    pub served_rate: f64,
    /// Vehicles that joined source queues (veh).
    pub injected: f64,
    /// Phase decisions made this step (empty between cadence epochs).
    pub decisions: Vec<ControlDecision>,
    /// |Δmass − (in − out)| / max(1, mass) for this step.
    pub mass_error: f64,
}

/// A running simulation: one network, one seed, one policy.
pub struct Engine<'g> {
    pub graph: &'g NetworkGraph,
    pub state: NetworkState,
    pub signals: SignalState,
    pub controller: Controller,
    pub incidents: IncidentMap,
    pub par: Parallelism,
    /// Lane-aggregated dynamics parameters per arc for this run (one
    /// realization; equals the configured means when nothing is random).
    pub realized: Vec<ArcFd>,
    pub master_seed: u64,
    pub step_index: u64,
    pub served_total: f64,
    pub injected_total: f64,
    arrival_rngs: Vec<ChaCha8Rng>,
}

impl<'g> Engine<'g> {
    /// Engine with the policy named in the config.
    pub fn new(graph: &'g NetworkGraph, master_seed: u64) -> Result<Engine<'g>, BuildError> {
        Engine::with_policy(graph, graph.controller.policy, master_seed)
    }

    pub fn with_policy(
        graph: &'g NetworkGraph,
        policy: PolicyKind,
        master_seed: u64,
    ) -> Result<Engine<'g>, BuildError> {
        let state = NetworkState::initial(graph)?;
        let controller = Controller::with_policy(graph, policy, master_seed)?;
        let arrival_rngs = (0..graph.arrivals.len())
            .map(|i| {
                ChaCha8Rng::seed_from_u64(substream_seed(
                    master_seed,
                    StreamKind::Arrivals,
                    i as u64,
                ))
            })
            .collect();
        Ok(Engine {
            graph,
            state,
            signals: SignalState::new(graph),
            controller,
            incidents: IncidentMap::new(graph),
            par: Parallelism::default(),
            realized: realized_arc_fds(graph, master_seed),
            master_seed,
            step_index: 0,
            served_total: 0.0,
            injected_total: 0.0,
            arrival_rngs,
        })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.graph.dt
    }

    /// Effective fundamental-diagram view at the current time.
    pub fn fd_view(&self) -> FdView<'_> {
        FdView {
            graph: self.graph,
            base: &self.realized,
            incidents: &self.incidents,
            time: self.time(),
        }
    }

    /// Vehicles joining each `[arc][commodity]` source slot this step.
    fn draw_arrivals(&mut self, t: f64, dt: f64) -> Vec<Vec<f64>> {
        let mut buf: Vec<Vec<f64>> = self
            .graph
            .arcs
            .iter()
            .map(|a| vec![0.0; a.commodities.len()])
            .collect();
        for (i, binding) in self.graph.arrivals.iter().enumerate() {
            let mean = binding.rate.value_at(t) * dt;
            let n = draw_arrival_count(binding.process, mean, &mut self.arrival_rngs[i]);
            buf[binding.arc.0][binding.commodity] += n;
        }
        buf
    }

    /// Advance one step. Returns what happened; errors indicate corrupted
    /// state (negative density, cap violation), never ordinary traffic.
    pub fn step(&mut self) -> Result<StepOutcome, SimError> {
        let g = self.graph;
        let dt = g.dt;
        let t = self.time();
        let mass_before = self.state.total_vehicles(g);

        // (1) Exogenous arrivals for this step, held aside until the
        // update so the controller sees the pre-step state.
        let arrivals = self.draw_arrivals(t, dt);
        let injected: f64 = arrivals.iter().map(|a| a.iter().sum::<f64>()).sum();

        // (2) Due nodes re-decide.
        let ctx = ControlCtx {
            graph: g,
            incidents: &self.incidents,
            time: t,
            dt,
            par: self.par,
        };
        let decisions = self.controller.tick(&ctx, &self.state, &mut self.signals);

        // (3) All movement fluxes from the frozen state. The saturation
        // ramp applies per signalized node, evaluated at the step midpoint
        // of its current green.
        let view = FdView {
            graph: g,
            base: &self.realized,
            incidents: &self.incidents,
            time: t,
        };
        let state = &self.state;
        let signals = &self.signals;
        let arrivals_ref = &arrivals;
        let per_node = ordered_map(self.par, g.nodes.len(), |ni| {
            let node = &g.nodes[ni];
            let ramp = if node.is_signalized() {
                startup_ramp(t + dt / 2.0 - signals.green_start[ni], g.sim.tau_startup)
            } else {
                1.0
            };
            solve_node(
                state,
                &view,
                crate::network::NodeIdx(ni),
                signals.active[ni],
                ramp,
                dt,
                Some(arrivals_ref),
            )
        });
        let mut mov_q = vec![0.0; g.movements.len()];
        for (node, flux) in g.nodes.iter().zip(&per_node) {
            for (&m, &q) in node.movements.iter().zip(flux) {
                mov_q[m.0] = q;
            }
        }

        // (4) Vehicles leaving the network: free discharge off every exit
        // arc's last cell.
        let served_rate: f64 = ordered_map(self.par, g.arcs.len(), |ai| {
            let arc = &g.arcs[ai];
            if arc.is_source || !arc.is_exit() {
                0.0
            } else {
                let last = arc.cell_count - 1;
                let rho = self.state.arcs[ai].cell_total(last);
                view.cell_fd(crate::network::ArcIdx(ai), last).demand(rho)
            }
        })
        .iter()
        .sum();

        // (5) Apply: per-arc updates are independent given the flux
        // vector and this arc's own rows.
        let mov_q_ref = &mov_q;
        for_each_mut(self.par, &mut self.state.arcs, |ai, arc_state| {
            let arc = &g.arcs[ai];
            if arc.is_source {
                for (k, row) in arc_state.rows.iter_mut().enumerate() {
                    let out: f64 = arc
                        .outgoing
                        .iter()
                        .filter(|&&m| g.movement(m).from_commodity == k)
                        .map(|&m| mov_q_ref[m.0])
                        .sum();
                    let mut q = row[0] + arrivals_ref[ai][k] - out * dt;
                    if q < 0.0 && q > QUEUE_ROUNDING_GUARD {
                        q = 0.0;
                    }
                    row[0] = q;
                }
                return;
            }

            let cells = arc.cell_count;
            let dx = arc.dx;
            let n_com = arc.commodities.len();

            // Entry inflow per commodity: movement fluxes into this arc,
            // relabeled by the turn fractions at the entry.
            let total_in: f64 = arc.incoming.iter().map(|&m| mov_q_ref[m.0]).sum();
            let entry_in: Vec<f64> = (0..n_com)
                .map(|k| total_in * g.split_at(crate::network::ArcIdx(ai), k, t))
                .collect();

            // Interface fluxes between cells i and i+1: total flux
            // min(demand, supply), split by commodity share of cell i.
            let mut iface = vec![vec![0.0; cells.saturating_sub(1)]; n_com];
            for i in 0..cells.saturating_sub(1) {
                let rho_i: f64 = arc_state.cell_total(i);
                let rho_next = arc_state.cell_total(i + 1);
                let f = view
                    .cell_fd(crate::network::ArcIdx(ai), i)
                    .demand(rho_i)
                    .min(view.cell_fd(crate::network::ArcIdx(ai), i + 1).supply(rho_next));
                if rho_i > 0.0 {
                    for (k, flux_row) in iface.iter_mut().enumerate() {
                        flux_row[i] = f * arc_state.rows[k][i] / rho_i;
                    }
                }
            }

            // Exit outflow per commodity: movement fluxes for arcs that
            // continue, free discharge (proportional to commodity share
            // of the last cell) off exit arcs.
            let last = cells - 1;
            let exit_out: Vec<f64> = if arc.is_exit() {
                let rho: f64 = arc_state.cell_total(last);
                let f = view.cell_fd(crate::network::ArcIdx(ai), last).demand(rho);
                (0..n_com)
                    .map(|k| {
                        if rho > 0.0 {
                            f * arc_state.rows[k][last] / rho
                        } else {
                            0.0
                        }
                    })
                    .collect()
            } else {
                (0..n_com)
                    .map(|k| {
                        arc.outgoing
                            .iter()
                            .filter(|&&m| g.movement(m).from_commodity == k)
                            .map(|&m| mov_q_ref[m.0])
                            .sum()
                    })
                    .collect()
            };

            for (k, row) in arc_state.rows.iter_mut().enumerate() {
                for i in 0..cells {
                    let f_in = if i == 0 { entry_in[k] } else { iface[k][i - 1] };
                    let f_out = if i == last { exit_out[k] } else { iface[k][i] };
                    row[i] += dt / dx * (f_in - f_out);
                }
            }
        });

        self.step_index += 1;
        self.state.time = self.time();
        self.state.check_bounds(g)?;

        let mass_after = self.state.total_vehicles(g);
        let mass_error = (mass_after - mass_before - injected + served_rate * dt).abs()
            / mass_after.max(1.0);
        self.served_total += served_rate * dt;
        self.injected_total += injected;

        Ok(StepOutcome {
            time: t,
            served_rate,
            injected,
            decisions,
            mass_error,
        })
    }

    /// Active phase ids in node order, `;`-separated — the metrics field.
    pub fn active_phase_ids(&self) -> String {
        self.graph
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| n.phases[self.signals.active[i]].id.as_str())
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Vehicles arriving in one step: the mean itself under the
/// deterministic process, a Poisson count with that mean otherwise.
pub fn draw_arrival_count(
    process: ArrivalProcess,
    mean: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    match process {
        ArrivalProcess::Deterministic => mean.max(0.0),
        ArrivalProcess::Poisson => {
            if mean > 0.0 {
                Poisson::new(mean).expect("positive mean").sample(rng)
            } else {
                0.0
            }
        }
    }
}
