//! Whole runs and batch experiments.
//!
//! [`run_scenario`] drives an [`Engine`](crate::step::Engine) over a full
//! horizon, sampling the metrics series, the quadratic-energy series, and
//! the delay integral, then judges stability from the source-queue trend.
//! On top of that sit the batch experiments: [`capacity_sweep`] bisects on
//! a demand scale along rays in arrival-rate space until it brackets the
//! largest load a policy keeps stable, and [`recovery_experiment`]
//! measures how quickly each policy works off a disturbance — a demand
//! peak, an incident window, or both.
//!
//! Every run is a pure function of (network, policy, seed): replications
//! and sweep points draw from disjoint seeded substreams and can execute
//! in any order, including concurrently.

use serde::Serialize;

use crate::config::PolicyKind;
use crate::control::ControlDecision;
use crate::error::SimError;
use crate::exec::{ordered_map, Parallelism};
use crate::metrics::{MetricsRecord, MetricsSeries};
use crate::network::{ArcIdx, NetworkGraph};
use crate::node_model::FdView;
use crate::rng::{substream_seed, StreamKind};
use crate::stability::{lyapunov, StabilityReport, StabilityThresholds, Verdict};
use crate::state::NetworkState;
use crate::step::Engine;

/// Comparability threshold from the classical delay-knee reading of
/// capacity plots: a point whose per-vehicle delay exceeds this many
/// seconds is marked even when the queue-trend verdict says stable.
pub const DELAY_KNEE_S_PER_VEH: f64 = 40.0;

/// Everything a single run needs beyond the network itself.
#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Policy override; `None` runs whatever the config names.
    pub policy: Option<PolicyKind>,
    pub seed: u64,
    /// Horizon override (s); `None` runs the configured horizon.
    pub horizon: Option<f64>,
    pub par: Parallelism,
    pub thresholds: StabilityThresholds,
    /// Keep every phase decision (sized ~nodes × horizon / cadence).
    pub record_decisions: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            policy: None,
            seed: 1,
            horizon: None,
            par: Parallelism::default(),
            thresholds: StabilityThresholds::default(),
            record_decisions: false,
        }
    }
}

/// What one run produced.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub metrics: MetricsSeries,
    pub report: StabilityReport,
    pub decisions: Vec<ControlDecision>,
    /// Vehicles that left the network over the run.
    pub served: f64,
    /// Vehicles that entered source queues over the run.
    pub injected: f64,
    /// Integral of the delay rate over the run (veh·s).
    pub delay_total: f64,
    /// `delay_total / served` (s/veh); 0 when nothing was served.
    pub delay_per_vehicle: f64,
    pub max_mass_error: f64,
}

/// Seconds of delay accrued per second of simulation: each cell
/// contributes its vehicles times the fraction of free-flow speed they
/// are missing, and queued vehicles at the sources count in full.
pub fn delay_rate(graph: &NetworkGraph, state: &NetworkState, view: &FdView) -> f64 {
    let mut total = state.source_queue_total(graph);
    for (ai, arc) in graph.arcs.iter().enumerate() {
        if arc.is_source {
            continue;
        }
        let arc_state = &state.arcs[ai];
        for i in 0..arc.cell_count {
            let rho = arc_state.cell_total(i);
            if rho <= 0.0 {
                continue;
            }
            let fd = view.cell_fd(ArcIdx(ai), i);
            // Free-flow cells round to ±ε; delay cannot be negative.
            total += rho * arc.dx * (1.0 - fd.speed(rho) / fd.v_free).max(0.0);
        }
    }
    total
}

/// Run one seed over the horizon and judge it.
pub fn run_scenario(graph: &NetworkGraph, opts: &RunOptions) -> Result<RunResult, SimError> {
    let policy = opts.policy.unwrap_or(graph.controller.policy);
    let horizon = opts.horizon.unwrap_or(graph.sim.horizon);
    let mut engine = Engine::with_policy(graph, policy, opts.seed)?;
    engine.par = opts.par;

    let dt = graph.dt;
    let n_steps = (horizon / dt).ceil() as u64;
    let metrics_stride = graph.sim.metrics_stride.max(1) as u64;
    let lyapunov_stride = graph.sim.lyapunov_stride.max(1) as u64;

    let mut metrics = MetricsSeries::default();
    let mut samples: Vec<(f64, f64, f64)> = Vec::new();
    let mut v_series: Vec<(f64, f64)> = Vec::new();
    let mut decisions: Vec<ControlDecision> = Vec::new();
    let mut delay_total = 0.0;
    let mut max_mass_error = 0.0_f64;

    let mut last_v = lyapunov(graph, &engine.state, opts.par);
    let record = |engine: &Engine,
                      throughput: f64,
                      v: f64,
                      metrics: &mut MetricsSeries,
                      samples: &mut Vec<(f64, f64, f64)>,
                      v_series: &mut Vec<(f64, f64)>| {
        let t = engine.time();
        let view = engine.fd_view();
        let mass = engine.state.total_vehicles(graph);
        let queue = engine.state.source_queue_total(graph);
        metrics.push(MetricsRecord {
            time: t,
            total_vehicles: mass,
            source_queue_total: queue,
            throughput,
            delay_rate: delay_rate(graph, &engine.state, &view),
            lyapunov_v: v,
            active_phases: engine.active_phase_ids(),
        });
        samples.push((t, queue, mass));
        v_series.push((t, v));
    };

    record(&engine, 0.0, last_v, &mut metrics, &mut samples, &mut v_series);

    for step in 0..n_steps {
        let out = engine.step()?;
        max_mass_error = max_mass_error.max(out.mass_error);
        if opts.record_decisions {
            decisions.extend(out.decisions);
        }
        let view = engine.fd_view();
        delay_total += delay_rate(graph, &engine.state, &view) * dt;

        let index = step + 1;
        if index % lyapunov_stride == 0 || index == n_steps {
            last_v = lyapunov(graph, &engine.state, opts.par);
        }
        if index % metrics_stride == 0 || index == n_steps {
            record(
                &engine,
                out.served_rate,
                last_v,
                &mut metrics,
                &mut samples,
                &mut v_series,
            );
        }
    }

    let report = StabilityReport::from_series(&samples, v_series, horizon, &opts.thresholds);
    let served = engine.served_total;
    Ok(RunResult {
        metrics,
        report,
        decisions,
        served,
        injected: engine.injected_total,
        delay_total,
        delay_per_vehicle: if served > 0.0 { delay_total / served } else { 0.0 },
        max_mass_error,
    })
}

/// Copy of the network with every arrival rate replaced by
/// `scale × weights[i]` (veh/s, constant). `weights` must have one entry
/// per arrival binding — a direction in demand space.
pub fn with_ray_demand(graph: &NetworkGraph, weights: &[f64], scale: f64) -> NetworkGraph {
    let mut g = graph.clone();
    for (binding, &w) in g.arrivals.iter_mut().zip(weights) {
        binding.rate = crate::config::Profile::Constant(scale * w);
    }
    g
}

/// Copy of the network with all arrival rates multiplied by `factor`
/// inside `[start, end)` — a demand peak.
pub fn with_demand_peak(graph: &NetworkGraph, factor: f64, start: f64, end: f64) -> NetworkGraph {
    let mut g = graph.clone();
    for binding in g.arrivals.iter_mut() {
        binding.rate = binding.rate.scaled_within(factor, start, end);
    }
    g
}

/// One direction in arrival-rate space to probe.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRay {
    pub name: String,
    /// Per-arrival-binding rate at scale 1 (veh/s). Unit entries make the
    /// sweep scale an absolute rate; base-demand entries make it a
    /// multiplier.
    pub weights: Vec<f64>,
}

/// Capacity-frontier search plan.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub rays: Vec<SweepRay>,
    /// Bracket half-width at which bisection stops (same unit as the
    /// scale).
    pub tolerance: f64,
    /// Per-point run horizon (s).
    pub horizon: f64,
    /// Seeds per point; verdict by majority.
    pub replications: usize,
    pub master_seed: u64,
    pub policy: PolicyKind,
    /// Upper end of the initial bracket.
    pub scale_max: f64,
    /// Fresh-seed re-runs granted when a point comes back inconclusive.
    pub retry_budget: usize,
    pub thresholds: StabilityThresholds,
    pub par: Parallelism,
}

/// One evaluated (ray, scale) point.
#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub ray: String,
    pub scale: f64,
    pub verdict: Verdict,
    /// Majority-replication queue slope (veh/s); the median replication's.
    pub slope: f64,
    /// Mean per-vehicle delay across replications (s/veh).
    pub avg_delay: f64,
    /// Per-vehicle delay crossed the classical knee threshold.
    pub delay_knee_exceeded: bool,
    /// No majority verdict within the retry budget.
    pub flagged: bool,
}

/// Where a ray's stable/unstable boundary landed.
#[derive(Clone, Debug, Serialize)]
pub struct FrontierRay {
    pub ray: String,
    /// Midpoint of the final bracket.
    pub scale: f64,
    /// Largest scale with a stable verdict.
    pub stable_scale: f64,
    /// Smallest scale with an unstable verdict (`scale_max` + tolerance
    /// when nothing unstable was found).
    pub unstable_scale: f64,
    /// Search left the bracket unresolved (inconclusive points or a
    /// too-small `scale_max`).
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrontierEstimate {
    pub frontier: Vec<FrontierRay>,
    /// Every point evaluated on the way, in evaluation order.
    pub points: Vec<SweepPoint>,
}

impl FrontierEstimate {
    /// `ray,scale,verdict,slope,avg_delay` rows for every evaluated point.
    pub fn points_csv(&self) -> String {
        let mut out = String::from("ray,scale,verdict,slope,avg_delay\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{:?},{},{}\n",
                p.ray,
                p.scale,
                p.verdict,
                p.slope,
                p.avg_delay
            ));
        }
        out
    }
}

/// Majority verdict for one (ray, scale) point across replications.
fn evaluate_point(
    graph: &NetworkGraph,
    spec: &SweepSpec,
    ray_index: usize,
    ray: &SweepRay,
    scale: f64,
    eval_index: u64,
) -> Result<SweepPoint, SimError> {
    let g = with_ray_demand(graph, &ray.weights, scale);
    let reps = spec.replications.max(1);
    let total_rounds = 1 + spec.retry_budget;
    let mut verdicts: Vec<(Verdict, f64, f64)> = Vec::new();
    for round in 0..total_rounds {
        let round_results: Vec<Result<RunResult, SimError>> =
            ordered_map(spec.par, reps, |r| {
                let job = ((eval_index * total_rounds as u64 + round as u64) * reps as u64
                    + r as u64)
                    .wrapping_add((ray_index as u64) << 48);
                let opts = RunOptions {
                    policy: Some(spec.policy),
                    seed: substream_seed(spec.master_seed, StreamKind::Replication, job),
                    horizon: Some(spec.horizon),
                    par: Parallelism::Sequential,
                    thresholds: spec.thresholds,
                    record_decisions: false,
                };
                run_scenario(&g, &opts)
            });
        for res in round_results {
            let r = res?;
            verdicts.push((r.report.verdict, r.report.queue_slope, r.delay_per_vehicle));
        }
        let stable = verdicts.iter().filter(|v| v.0 == Verdict::Stable).count();
        let unstable = verdicts.iter().filter(|v| v.0 == Verdict::Unstable).count();
        let majority = verdicts.len() / 2 + 1;
        if stable >= majority || unstable >= majority || round + 1 == total_rounds {
            let verdict = if stable >= majority {
                Verdict::Stable
            } else if unstable >= majority {
                Verdict::Unstable
            } else {
                Verdict::Inconclusive
            };
            // Median slope of the replications agreeing with the verdict
            // (all of them when inconclusive).
            let mut slopes: Vec<f64> = verdicts
                .iter()
                .filter(|v| verdict == Verdict::Inconclusive || v.0 == verdict)
                .map(|v| v.1)
                .collect();
            slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let slope = slopes.get(slopes.len() / 2).copied().unwrap_or(0.0);
            let avg_delay =
                verdicts.iter().map(|v| v.2).sum::<f64>() / verdicts.len() as f64;
            return Ok(SweepPoint {
                ray: ray.name.clone(),
                scale,
                verdict,
                slope,
                avg_delay,
                delay_knee_exceeded: avg_delay > DELAY_KNEE_S_PER_VEH,
                flagged: verdict == Verdict::Inconclusive,
            });
        }
    }
    unreachable!("loop returns on the last round");
}

/// Bisect each ray between its largest stable and smallest unstable
/// demand scale. Inconclusive points count as unstable for the search
/// (the conservative side) and flag the ray.
pub fn capacity_sweep(
    graph: &NetworkGraph,
    spec: &SweepSpec,
) -> Result<FrontierEstimate, SimError> {
    let mut points = Vec::new();
    let mut frontier = Vec::new();
    for (ri, ray) in spec.rays.iter().enumerate() {
        let mut eval_index = 0_u64;
        let mut eval = |scale: f64,
                        points: &mut Vec<SweepPoint>|
         -> Result<Verdict, SimError> {
            let p = evaluate_point(graph, spec, ri, ray, scale, eval_index)?;
            eval_index += 1;
            let v = p.verdict;
            points.push(p);
            Ok(v)
        };

        let mut ray_flagged = false;
        let mut lo = 0.0_f64; // zero demand is stable by construction
        let mut hi = spec.scale_max;
        match eval(hi, &mut points)? {
            Verdict::Stable => {
                // Entire bracket stable: report the cap itself, flagged.
                frontier.push(FrontierRay {
                    ray: ray.name.clone(),
                    scale: hi,
                    stable_scale: hi,
                    unstable_scale: hi + spec.tolerance,
                    flagged: true,
                });
                continue;
            }
            Verdict::Unstable => {}
            Verdict::Inconclusive => ray_flagged = true,
        }
        while hi - lo > spec.tolerance {
            let mid = 0.5 * (lo + hi);
            match eval(mid, &mut points)? {
                Verdict::Stable => lo = mid,
                Verdict::Unstable => hi = mid,
                Verdict::Inconclusive => {
                    ray_flagged = true;
                    hi = mid;
                }
            }
        }
        frontier.push(FrontierRay {
            ray: ray.name.clone(),
            scale: 0.5 * (lo + hi),
            stable_scale: lo,
            unstable_scale: hi,
            flagged: ray_flagged,
        });
    }
    Ok(FrontierEstimate { frontier, points })
}

/// Recovery measurement plan: where the disturbance sits in time and how
/// the delay series is judged afterwards.
#[derive(Clone, Debug)]
pub struct RecoveryOptions {
    /// Disturbance window (demand peak and/or incident), absolute times.
    pub window: (f64, f64),
    pub seed: u64,
    pub horizon: f64,
    /// Pre-window stretch whose mean delay rate defines "steady".
    pub steady_window: f64,
    /// Trailing mean width for the post-window delay series (s).
    pub smooth_window: f64,
    /// Recovered means smoothed delay ≤ this factor × steady.
    pub recovery_factor: f64,
    pub par: Parallelism,
    pub thresholds: StabilityThresholds,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            window: (0.0, 0.0),
            seed: 1,
            horizon: 3600.0,
            steady_window: 600.0,
            smooth_window: 300.0,
            recovery_factor: 1.1,
            par: Parallelism::default(),
            thresholds: StabilityThresholds::default(),
        }
    }
}

/// One policy's recovery outcome.
#[derive(Clone, Debug, Serialize)]
pub struct PolicyRecovery {
    pub policy: PolicyKind,
    /// Mean delay rate over the pre-window steady stretch (veh·s/s).
    pub steady_delay_rate: f64,
    /// Seconds after the window's end until the smoothed delay rate
    /// first returns under `recovery_factor` × steady; `None` = never
    /// within the horizon.
    pub recovery_time: Option<f64>,
    pub delay_per_vehicle: f64,
    pub served: f64,
    pub verdict: Verdict,
}

/// Comparative report across policies on one disturbed network.
#[derive(Clone, Debug, Serialize)]
pub struct RecoveryReport {
    pub window: (f64, f64),
    pub recovery_factor: f64,
    pub runs: Vec<PolicyRecovery>,
}

/// Trailing-mean smoothing of `(t, value)` samples over `width` seconds.
fn trailing_mean(series: &[(f64, f64)], width: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(series.len());
    let mut start = 0;
    let mut sum = 0.0;
    for (i, &(t, v)) in series.iter().enumerate() {
        sum += v;
        while series[start].0 < t - width {
            sum -= series[start].1;
            start += 1;
        }
        out.push((t, sum / (i - start + 1) as f64));
    }
    out
}

/// When the smoothed delay series first drops back to steady level after
/// the window. The disturbance must be part of `graph` already (peaked
/// demand profiles, incident windows, or both).
pub fn measure_recovery(
    graph: &NetworkGraph,
    policy: PolicyKind,
    opts: &RecoveryOptions,
) -> Result<(PolicyRecovery, RunResult), SimError> {
    let run = run_scenario(
        graph,
        &RunOptions {
            policy: Some(policy),
            seed: opts.seed,
            horizon: Some(opts.horizon),
            par: opts.par,
            thresholds: opts.thresholds,
            record_decisions: false,
        },
    )?;
    let delay_series: Vec<(f64, f64)> = run
        .metrics
        .rows
        .iter()
        .map(|r| (r.time, r.delay_rate))
        .collect();
    let (start, end) = opts.window;
    let steady: Vec<f64> = delay_series
        .iter()
        .filter(|(t, _)| *t >= start - opts.steady_window && *t < start)
        .map(|(_, v)| *v)
        .collect();
    let steady_delay_rate = if steady.is_empty() {
        0.0
    } else {
        steady.iter().sum::<f64>() / steady.len() as f64
    };
    let smoothed = trailing_mean(&delay_series, opts.smooth_window);
    // Absolute floor so an undisturbed (near-zero-delay) run still
    // registers as recovered despite rounding noise.
    let threshold = opts.recovery_factor * steady_delay_rate + 1e-9;
    let recovery_time = smoothed
        .iter()
        .find(|(t, v)| *t >= end && *v <= threshold)
        .map(|(t, _)| t - end);
    Ok((
        PolicyRecovery {
            policy,
            steady_delay_rate,
            recovery_time,
            delay_per_vehicle: run.delay_per_vehicle,
            served: run.served,
            verdict: run.report.verdict,
        },
        run,
    ))
}

/// Run every policy on the same disturbed network and seed; collect the
/// comparative report (and each full run, for series output).
pub fn recovery_experiment(
    graph: &NetworkGraph,
    policies: &[PolicyKind],
    opts: &RecoveryOptions,
) -> Result<(RecoveryReport, Vec<RunResult>), SimError> {
    let mut runs = Vec::new();
    let mut results = Vec::new();
    for &policy in policies {
        let (summary, run) = measure_recovery(graph, policy, opts)?;
        runs.push(summary);
        results.push(run);
    }
    Ok((
        RecoveryReport {
            window: opts.window,
            recovery_factor: opts.recovery_factor,
            runs,
        },
        results,
    ))
}

/// Side-by-side totals for several policies on the same network + seed.
#[derive(Clone, Debug, Serialize)]
pub struct PolicyComparison {
    pub policy: PolicyKind,
    pub served: f64,
    pub delay_per_vehicle: f64,
    pub queue_slope: f64,
    pub verdict: Verdict,
}

pub fn compare_policies(
    graph: &NetworkGraph,
    policies: &[PolicyKind],
    opts: &RunOptions,
) -> Result<(Vec<PolicyComparison>, Vec<RunResult>), SimError> {
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &policy in policies {
        let run = run_scenario(
            graph,
            &RunOptions {
                policy: Some(policy),
                ..opts.clone()
            },
        )?;
        rows.push(PolicyComparison {
            policy,
            served: run.served,
            delay_per_vehicle: run.delay_per_vehicle,
            queue_slope: run.report.queue_slope,
            verdict: run.report.verdict,
        });
        results.push(run);
    }
    Ok((rows, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigDocument;
    use crate::network::build_network;
    use approx::assert_relative_eq;

    fn build(text: &str) -> NetworkGraph {
        build_network(&ConfigDocument::from_toml_str(text).unwrap()).unwrap()
    }

    fn pipe(rate: f64, horizon: f64) -> NetworkGraph {
        // Source cap above arc capacity: the arc's 0.5625 veh/s is the
        // binding constraint.
        build(&format!(
            r#"
            schema_version = 1
            [sim]
            horizon = {horizon}
            source_q_max_per_lane = 1.0
            [[arcs]]
            id = "a"
            length = 300.0
            [[arrivals]]
            arc = "a"
            rate = {rate}
            process = "deterministic"
        "#
        ))
    }

    #[test]
    fn zero_demand_is_stable_with_zero_delay() {
        let g = pipe(0.0, 600.0);
        let run = run_scenario(&g, &RunOptions::default()).unwrap();
        assert_eq!(run.report.verdict, Verdict::Stable);
        assert_eq!(run.delay_total, 0.0);
        assert_eq!(run.served, 0.0);
        assert!(run.metrics.rows.iter().all(|r| r.delay_rate == 0.0));
    }

    #[test]
    fn free_flow_run_accrues_no_delay_but_serves_vehicles() {
        let g = pipe(0.3, 1200.0);
        let run = run_scenario(&g, &RunOptions::default()).unwrap();
        assert_eq!(run.report.verdict, Verdict::Stable);
        assert!(run.served > 300.0, "served {}", run.served);
        // Some transient source-queue delay while the pipe fills; tiny
        // per-vehicle once spread over the run.
        assert!(
            run.delay_per_vehicle < 1.0,
            "delay {}",
            run.delay_per_vehicle
        );
        assert!(run.max_mass_error < 1e-9);
    }

    #[test]
    fn overload_is_unstable_and_underload_is_not() {
        // One movement, saturation flow 0.5625 veh/s: demand above it
        // must pile up at the source forever, demand below must not.
        let over = run_scenario(&pipe(0.7, 1800.0), &RunOptions::default()).unwrap();
        assert_eq!(over.report.verdict, Verdict::Unstable);
        // Queue grows at ~0.1375 veh/s.
        assert_relative_eq!(over.report.queue_slope, 0.7 - 0.5625, max_relative = 0.05);
        let under = run_scenario(&pipe(0.4, 1800.0), &RunOptions::default()).unwrap();
        assert_eq!(under.report.verdict, Verdict::Stable);
    }

    #[test]
    fn identical_seed_reproduces_the_series_bitwise() {
        let g = build(
            r#"
            schema_version = 1
            [sim]
            horizon = 400.0
            [controller]
            policy = "pwbp"
            [[arcs]]
            id = "up"
            length = 150.0
            to = "n"
            [[arcs]]
            id = "dn"
            length = 150.0
            from = "n"
            [[arcs]]
            id = "side"
            source = true
            to = "n"
            q_max = 0.5
            [[nodes]]
            id = "n"
            [[movements]]
            from = "up"
            to = "dn"
            [[movements]]
            from = "side"
            to = "dn"
            [[phases]]
            node = "n"
            movements = ["up->dn"]
            [[phases]]
            node = "n"
            movements = ["side->dn"]
            [[arrivals]]
            arc = "up"
            rate = 0.15
            [[arrivals]]
            arc = "side"
            rate = 0.2
        "#,
        );
        let a = run_scenario(&g, &RunOptions { seed: 7, ..Default::default() }).unwrap();
        let b = run_scenario(&g, &RunOptions { seed: 7, ..Default::default() }).unwrap();
        assert_eq!(a.metrics.to_csv_string(), b.metrics.to_csv_string());
        let c = run_scenario(&g, &RunOptions { seed: 8, ..Default::default() }).unwrap();
        assert_ne!(a.metrics.to_csv_string(), c.metrics.to_csv_string());
    }

    #[test]
    fn ray_demand_replaces_rates() {
        let g = pipe(0.3, 600.0);
        let scaled = with_ray_demand(&g, &[1.0], 0.45);
        assert_eq!(scaled.arrivals[0].rate.value_at(123.0), 0.45);
        // Original untouched.
        assert_eq!(g.arrivals[0].rate.value_at(123.0), 0.3);
    }

    #[test]
    fn demand_peak_applies_only_inside_its_window() {
        let g = pipe(0.2, 600.0);
        let peaked = with_demand_peak(&g, 3.0, 100.0, 200.0);
        let r = &peaked.arrivals[0].rate;
        assert_eq!(r.value_at(0.0), 0.2);
        assert_eq!(r.value_at(99.9), 0.2);
        assert_relative_eq!(r.value_at(100.0), 0.6);
        assert_relative_eq!(r.value_at(199.9), 0.6);
        assert_eq!(r.value_at(200.0), 0.2);
    }

    #[test]
    fn bisection_brackets_the_pipe_capacity() {
        // Single ray on the pipe: the true frontier is the saturation
        // flow 0.5625 veh/s. Tolerance 0.05 must bracket it.
        let g = pipe(0.1, 600.0);
        let spec = SweepSpec {
            rays: vec![SweepRay {
                name: "main".into(),
                weights: vec![1.0],
            }],
            tolerance: 0.05,
            horizon: 1500.0,
            replications: 1,
            master_seed: 3,
            policy: PolicyKind::Pwbp,
            scale_max: 1.0,
            retry_budget: 1,
            thresholds: StabilityThresholds::default(),
            par: Parallelism::Sequential,
        };
        let est = capacity_sweep(&g, &spec).unwrap();
        assert_eq!(est.frontier.len(), 1);
        let f = &est.frontier[0];
        assert!(
            f.stable_scale <= 0.5625 && 0.5625 <= f.unstable_scale + 1e-12,
            "bracket [{}, {}] missed 0.5625",
            f.stable_scale,
            f.unstable_scale
        );
        assert!(f.unstable_scale - f.stable_scale <= spec.tolerance + 1e-12);
        assert!(!f.flagged);
        // Monotone search: every stable point ≤ every unstable point.
        let max_stable = est
            .points
            .iter()
            .filter(|p| p.verdict == Verdict::Stable)
            .map(|p| p.scale)
            .fold(0.0, f64::max);
        let min_unstable = est
            .points
            .iter()
            .filter(|p| p.verdict == Verdict::Unstable)
            .map(|p| p.scale)
            .fold(f64::INFINITY, f64::min);
        assert!(max_stable < min_unstable);
    }

    #[test]
    fn sweep_csv_has_one_row_per_point() {
        let g = pipe(0.1, 600.0);
        let spec = SweepSpec {
            rays: vec![SweepRay {
                name: "main".into(),
                weights: vec![1.0],
            }],
            tolerance: 0.2,
            horizon: 900.0,
            replications: 1,
            master_seed: 3,
            policy: PolicyKind::Pwbp,
            scale_max: 0.8,
            retry_budget: 0,
            thresholds: StabilityThresholds::default(),
            par: Parallelism::Sequential,
        };
        let est = capacity_sweep(&g, &spec).unwrap();
        let csv = est.points_csv();
        assert_eq!(csv.lines().count(), est.points.len() + 1);
        assert!(csv.starts_with("ray,scale,verdict,slope,avg_delay\n"));
    }

    #[test]
    fn no_disturbance_recovers_immediately() {
        // Window passes with nothing in it: delay never left steady
        // state, so the first post-window sample already qualifies.
        let g = pipe(0.3, 1200.0);
        let opts = RecoveryOptions {
            window: (400.0, 600.0),
            horizon: 1200.0,
            ..Default::default()
        };
        let (rec, _) = measure_recovery(&g, PolicyKind::Pwbp, &opts).unwrap();
        assert_eq!(rec.recovery_time, Some(0.0));
    }

    #[test]
    fn overload_peak_on_a_pipe_never_recovers_in_horizon() {
        // Peak pushes demand to 3× saturation for 400 s; the backlog
        // (~0.54·400 ≈ 200 veh at 0.5625 veh/s service) takes far longer
        // than the remaining 200 s of horizon to clear.
        let g = pipe(0.3, 1200.0);
        let peaked = with_demand_peak(&g, 6.0, 400.0, 800.0);
        let opts = RecoveryOptions {
            window: (400.0, 800.0),
            horizon: 1200.0,
            ..Default::default()
        };
        let (rec, _) = measure_recovery(&peaked, PolicyKind::Pwbp, &opts).unwrap();
        assert_eq!(rec.recovery_time, None);
        assert!(rec.steady_delay_rate < 1.0);
    }

    #[test]
    fn trailing_mean_window_is_honored() {
        let series: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, i as f64)).collect();
        let sm = trailing_mean(&series, 2.0);
        // At t=5 the window holds t ∈ {3,4,5} → mean 4.
        assert_relative_eq!(sm[5].1, 4.0);
        assert_relative_eq!(sm[0].1, 0.0);
    }

    #[test]
    fn compare_policies_reports_each_policy_once() {
        let g = pipe(0.3, 400.0);
        let (rows, runs) = compare_policies(
            &g,
            &[PolicyKind::FixedTime, PolicyKind::Bp, PolicyKind::Pwbp],
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(runs.len(), 3);
        // Uncontested pipe: every policy serves the same demand.
        for r in &rows {
            assert_relative_eq!(r.served, rows[0].served, max_relative = 1e-9);
        }
        serde_json::to_string(&rows).unwrap();
    }
}
