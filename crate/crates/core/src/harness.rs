//! Scenario files, Monte Carlo orchestration and reports.
//!
//! A scenario fixes one topology sequence and one initial state, both drawn
//! from the scenario seed, and runs `trials` independent realizations of the
//! channel on top of them. Trial `t` owns the stream `(seed, t)`, so traces do
//! not depend on the trial count or on execution order.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{bound_constants, BoundConstants, BoundMode, MetricsTrace};
use crate::channel::{ChannelModel, ChannelSpec, NegativePolicy};
use crate::error::{Error, Result};
use crate::graph::{
    certify_aligned_windows, generate_sampled_sequence, ConnectivityCertificate, PhysicalTopology,
    SequenceGenerator, TopologySequence,
};
use crate::protocol::{
    step_baseline, step_with_schedule, validate_schedule, StateVector, StepsizeRule,
    StepsizeSchedule, ValidationMode,
};
use crate::rng::{stream, trial_stream, StreamDomain};

pub const DEFAULT_HORIZON: usize = 10_000;
pub const DEFAULT_TRIALS: usize = 100;
/// Traces longer than this are thinned by default.
pub const THIN_TARGET: usize = 10_000;
/// Trials simulated concurrently before their results are folded.
const TRIAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Complete {
        n_agents: usize,
    },
    Ring {
        n_agents: usize,
    },
    Path {
        n_agents: usize,
    },
    /// The bundled 50-agent stand-in graph.
    Bundled50,
    /// `{n_agents, edges}` JSON file, relative to the scenario file.
    File {
        path: PathBuf,
    },
    Explicit {
        n_agents: usize,
        edges: Vec<[usize; 2]>,
    },
}

impl TopologySpec {
    pub fn resolve(&self, dir: &Path) -> Result<PhysicalTopology> {
        match self {
            TopologySpec::Complete { n_agents } => PhysicalTopology::complete(*n_agents),
            TopologySpec::Ring { n_agents } => PhysicalTopology::ring(*n_agents),
            TopologySpec::Path { n_agents } => PhysicalTopology::path(*n_agents),
            TopologySpec::Bundled50 => Ok(PhysicalTopology::bundled_fifty()),
            TopologySpec::File { path } => PhysicalTopology::load(dir.join(path)),
            TopologySpec::Explicit { n_agents, edges } => {
                PhysicalTopology::new(*n_agents, edges.iter().map(|&[i, j]| (i, j)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SequenceSpec {
    Static {
        #[serde(default = "one")]
        window: usize,
    },
    /// Random induced-subgraph sampling with joint connectivity per window.
    Sampled { window: usize, q: f64 },
    /// Replay file `{base, window, events}`; its base replaces `topology`.
    File { path: PathBuf },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleSpec {
    Value(f64),
    /// `"auto_dmax"`: `1 / max_i Σ_j ā_ij` on the base topology.
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleSpec {
    PowerLaw {
        p: f64,
        scale: ScaleSpec,
        #[serde(default)]
        perturbation: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl RuleSpec {
    fn resolve(&self, d_max: f64) -> Result<StepsizeRule> {
        match self {
            RuleSpec::PowerLaw {
                p,
                scale,
                perturbation,
            } => {
                let scale = match scale {
                    ScaleSpec::Value(v) => *v,
                    ScaleSpec::Keyword(k) if k == "auto_dmax" => {
                        if d_max <= 0.0 {
                            return Err(Error::invalid(
                                "schedule.scale",
                                "auto_dmax needs a positive degree",
                            ));
                        }
                        1.0 / d_max
                    }
                    ScaleSpec::Keyword(k) => {
                        return Err(Error::invalid(
                            "schedule.scale",
                            format!("unknown keyword {k:?}"),
                        ))
                    }
                };
                Ok(StepsizeRule::PowerLaw {
                    exponent: *p,
                    scale,
                    perturbation: *perturbation,
                })
            }
            RuleSpec::Explicit { values } => Ok(StepsizeRule::Explicit {
                values: values.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRule {
    pub agent: usize,
    #[serde(flatten)]
    pub rule: RuleSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(flatten)]
    pub rule: RuleSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_agent: Vec<AgentRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    #[default]
    Proposed,
    Heterogeneous,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Explicit {
        values: Vec<f64>,
        #[serde(default)]
        x_min: Option<f64>,
        #[serde(default)]
        x_max: Option<f64>,
    },
    /// Drawn once per scenario from the scenario seed.
    Uniform { lo: f64, hi: f64 },
    /// `x_i = start + i step`.
    Ramp { start: f64, step: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Keep every `thin`-th step.
    #[serde(default)]
    pub thin: Option<usize>,
    /// Disable thinning.
    #[serde(default)]
    pub full_traces: bool,
    /// Emit `mse_1..mse_N` columns.
    #[serde(default)]
    pub mse_columns: bool,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub topology: TopologySpec,
    #[serde(default)]
    pub sequence: Option<SequenceSpec>,
    pub channel: ChannelSpec,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub protocol: ProtocolKind,
    pub initial: InitialSpec,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub policy: NegativePolicy,
    /// Shift used by the `offset-warn` policy; defaults to `x_max - x_min`.
    #[serde(default)]
    pub offset: Option<f64>,
    #[serde(default)]
    pub bound_mode: BoundMode,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut s = Self::from_json(&std::fs::read_to_string(path)?)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        Resolved::new(self.clone())
    }
}

/// A scenario with every random and derived input fixed.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub model: ChannelModel,
    pub seq: TopologySequence,
    /// `None` for the baseline protocol.
    pub schedule: Option<StepsizeSchedule>,
    pub initial: StateVector,
}

impl Resolved {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let dir = scenario.base_dir.clone().unwrap_or_default();
        let seed = scenario.seed;
        let mut topo = scenario.topology.resolve(&dir)?;
        let seq = match &scenario.sequence {
            None => TopologySequence::fixed(topo.clone()),
            Some(SequenceSpec::Static { window }) => {
                TopologySequence::with_failures(topo.clone(), *window, None, [])?
            }
            Some(SequenceSpec::Sampled { window, q }) => {
                let mut rng = stream(seed, StreamDomain::Topology, 0);
                generate_sampled_sequence(&topo, *window, *q, scenario.horizon.max(1), &mut rng)?
            }
            Some(SequenceSpec::File { path }) => {
                let seq = TopologySequence::load(dir.join(path))?;
                topo = seq.base().clone();
                seq
            }
        };
        let n = topo.n_agents();
        let model = scenario.channel.resolve(n)?;
        let initial = resolve_initial(&scenario.initial, n, seed)?;

        let schedule = match (scenario.protocol, &scenario.schedule) {
            (ProtocolKind::Baseline, _) => None,
            (_, None) => {
                return Err(Error::invalid(
                    "schedule",
                    "required unless protocol is baseline",
                ))
            }
            (kind, Some(spec)) => {
                let d_max = model.max_expected_degree(&topo);
                let common = spec.rule.resolve(d_max)?;
                match kind {
                    ProtocolKind::Proposed if spec.per_agent.is_empty() => {
                        Some(StepsizeSchedule::Common(common))
                    }
                    ProtocolKind::Proposed => {
                        return Err(Error::invalid(
                            "schedule.per_agent",
                            "per-agent overrides need protocol \"heterogeneous\"",
                        ))
                    }
                    _ => {
                        let mut rules = vec![common; n];
                        for o in &spec.per_agent {
                            if o.agent >= n {
                                return Err(Error::AgentOutOfRange {
                                    index: o.agent,
                                    n_agents: n,
                                });
                            }
                            rules[o.agent] = o.rule.resolve(d_max)?;
                        }
                        Some(StepsizeSchedule::PerAgent(rules))
                    }
                }
            }
        };
        Ok(Self {
            scenario,
            model,
            seq,
            schedule,
            initial,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.model.n_agents()
    }

    fn offset(&self) -> f64 {
        match self.scenario.policy {
            NegativePolicy::OffsetWarn => self
                .scenario
                .offset
                .unwrap_or(self.initial.x_max - self.initial.x_min),
            _ => 0.0,
        }
    }

    /// Trace stride: explicit, full, or the default `⌈K / 10⁴⌉`.
    pub fn stride(&self) -> usize {
        let out = &self.scenario.output;
        if out.full_traces {
            1
        } else if let Some(t) = out.thin {
            t.max(1)
        } else {
            self.scenario.horizon.div_ceil(THIN_TARGET).max(1)
        }
    }
}

fn resolve_initial(spec: &InitialSpec, n: usize, seed: u64) -> Result<StateVector> {
    match spec {
        InitialSpec::Explicit {
            values,
            x_min,
            x_max,
        } => {
            if values.len() != n {
                return Err(Error::invalid(
                    "initial.values",
                    format!("expected {n} entries, got {}", values.len()),
                ));
            }
            let lo = x_min.unwrap_or_else(|| values.iter().copied().fold(f64::INFINITY, f64::min));
            let hi =
                x_max.unwrap_or_else(|| values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            StateVector::new(values.clone(), lo, hi)
        }
        InitialSpec::Uniform { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::invalid(
                    "initial",
                    format!("lo {lo} exceeds hi {hi}"),
                ));
            }
            let mut rng = stream(seed, StreamDomain::InitialState, 0);
            let x = (0..n)
                .map(|_| lo + (hi - lo) * rng.random::<f64>())
                .collect();
            StateVector::new(x, *lo, *hi)
        }
        InitialSpec::Ramp { start, step } => {
            StateVector::from_values((0..n).map(|i| start + step * i as f64).collect())
        }
    }
}

/// Run-time switches that do not change the simulated process.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep every per-trial trace in the report.
    pub keep_traces: bool,
    /// Attach bound constants to the aggregate.
    pub compute_bounds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub final_state: Vec<f64>,
    pub final_v: f64,
    pub final_mean: f64,
    /// Agent-averaged `(x_i - initial average)²` at the horizon.
    pub final_mse: f64,
    pub negativity_events: usize,
    pub guard_events: usize,
    pub hull_violations: usize,
    /// Largest `V(k)` over recorded steps.
    pub max_v: f64,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub summary: TrialSummary,
    pub trace: MetricsTrace,
    pub wall_time_s: f64,
}

/// Trial-averaged curves and final statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub name: Option<String>,
    pub seed: u64,
    pub trials: usize,
    pub horizon: usize,
    pub stride: usize,
    pub n_agents: usize,
    pub initial_average: f64,
    pub initial_v: f64,
    pub k: Vec<usize>,
    pub mean_v: Vec<f64>,
    pub mean_network_mean: Vec<f64>,
    pub mean_mse: Vec<f64>,
    pub final_network_mean: f64,
    /// Standard error of `final_network_mean` across trials.
    pub final_network_mean_se: f64,
    /// Sample variance of the final network mean across trials.
    pub final_network_mean_var: f64,
    pub final_mean_v: f64,
    pub negativity_events: usize,
    pub guard_events: usize,
    pub hull_violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsOutcome {
    Computed(Box<BoundConstants>),
    Unavailable(String),
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub aggregate: Aggregate,
    pub summaries: Vec<TrialSummary>,
    /// Present when [`RunOptions::keep_traces`] is set.
    pub traces: Vec<MetricsTrace>,
    pub wall_time_s: f64,
}

/// One trial. Pure in `(resolved, trial)`.
pub fn run_trial(resolved: &Resolved, trial: usize) -> Result<TrialResult> {
    let started = Instant::now();
    let sc = &resolved.scenario;
    let horizon = sc.horizon;
    let stride = resolved.stride();
    let offset = resolved.offset();
    let mut rng = trial_stream(sc.seed, trial as u64);

    let mut state = resolved.initial.clone();
    if offset != 0.0 {
        state.x.iter_mut().for_each(|v| *v += offset);
    }
    let report = |x: &[f64]| -> Vec<f64> { x.iter().map(|v| v - offset).collect() };

    let mut trace = MetricsTrace::new(&resolved.initial.x, sc.output.mse_columns);
    trace.record(0, &resolved.initial.x, 0);
    let mut guards = 0usize;
    let mut hull = 0usize;
    for k in 0..horizon {
        state = match &resolved.schedule {
            None => {
                let out = step_baseline(
                    &resolved.model,
                    &resolved.seq.active_topology(k),
                    &state,
                    sc.policy,
                    &mut rng,
                )?;
                guards += out.guarded.len();
                out.state
            }
            Some(schedule) => {
                let out = step_with_schedule(
                    &resolved.model,
                    &resolved.seq,
                    schedule,
                    &state,
                    sc.policy,
                    &mut rng,
                )?;
                hull += out.hull_violations;
                out.state
            }
        };
        let next = k + 1;
        if next % stride == 0 || next == horizon {
            trace.record(next, &report(&state.x), state.negativity_events + guards);
        }
    }

    let final_state = report(&state.x);
    let n = final_state.len() as f64;
    let last = trace.last().expect("initial row recorded");
    let summary = TrialSummary {
        trial,
        final_v: last.v,
        final_mean: last.mean,
        final_mse: last.v / n + (last.mean - trace.initial_average).powi(2),
        final_state,
        negativity_events: state.negativity_events,
        guard_events: guards,
        hull_violations: hull,
        max_v: trace.rows.iter().map(|r| r.v).fold(0.0, f64::max),
    };
    Ok(TrialResult {
        summary,
        trace,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Runs every trial, writes traces and `aggregate.json` when the scenario
/// names an output directory, and returns the aggregate.
///
/// The schedule must pass its admissibility checks first (skipped for the
/// baseline protocol).
pub fn run(resolved: &Resolved, opts: &RunOptions) -> Result<RunReport> {
    let started = Instant::now();
    let sc = &resolved.scenario;
    if let Some(schedule) = &resolved.schedule {
        for v in schedule_verdicts(resolved, schedule) {
            if !v.passed {
                return Err(Error::InadmissibleSchedule(format!(
                    "{}: {}",
                    v.name, v.reason
                )));
            }
        }
    }
    if sc.trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let out_dir = sc.output.dir.as_ref().map(|d| resolve_path(sc, d));
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let n = resolved.n_agents();

    let mut k = Vec::new();
    let mut sum_v: Vec<f64> = Vec::new();
    let mut sum_mean: Vec<f64> = Vec::new();
    let mut sum_mse: Vec<f64> = Vec::new();
    let mut summaries = Vec::with_capacity(sc.trials);
    let mut traces = Vec::new();
    let mut initial_average = 0.0;

    let ids: Vec<usize> = (0..sc.trials).collect();
    for chunk in ids.chunks(TRIAL_CHUNK) {
        let results: Vec<Result<TrialResult>> =
            chunk.par_iter().map(|&t| run_trial(resolved, t)).collect();
        for res in results {
            let res = res?;
            if let Some(dir) = &out_dir {
                let file =
                    std::fs::File::create(dir.join(format!("trial_{:05}.csv", res.summary.trial)))?;
                res.trace.write_csv(std::io::BufWriter::new(file))?;
            }
            if k.is_empty() {
                k = res.trace.rows.iter().map(|r| r.k).collect();
                sum_v = vec![0.0; k.len()];
                sum_mean = vec![0.0; k.len()];
                sum_mse = vec![0.0; k.len()];
                initial_average = res.trace.initial_average;
            }
            let mse = res.trace.mean_mse(n);
            for (idx, row) in res.trace.rows.iter().enumerate() {
                sum_v[idx] += row.v;
                sum_mean[idx] += row.mean;
                sum_mse[idx] += mse[idx];
            }
            log::debug!(
                "trial {} finished in {:.3}s",
                res.summary.trial,
                res.wall_time_s
            );
            summaries.push(res.summary);
            if opts.keep_traces {
                traces.push(res.trace);
            }
        }
    }

    let m = sc.trials as f64;
    let finals: Vec<f64> = summaries.iter().map(|s| s.final_mean).collect();
    let final_network_mean = finals.iter().sum::<f64>() / m;
    let final_network_mean_var = if sc.trials > 1 {
        finals
            .iter()
            .map(|v| (v - final_network_mean).powi(2))
            .sum::<f64>()
            / (m - 1.0)
    } else {
        0.0
    };
    let mean_v: Vec<f64> = sum_v.iter().map(|v| v / m).collect();
    let bounds = opts.compute_bounds.then(|| bounds_for(resolved));
    let aggregate = Aggregate {
        name: sc.name.clone(),
        seed: sc.seed,
        trials: sc.trials,
        horizon: sc.horizon,
        stride: resolved.stride(),
        n_agents: n,
        initial_average,
        initial_v: crate::analysis::lyapunov(&resolved.initial.x),
        final_mean_v: *mean_v.last().expect("at least one row"),
        mean_v,
        mean_network_mean: sum_mean.iter().map(|v| v / m).collect(),
        mean_mse: sum_mse.iter().map(|v| v / m).collect(),
        k,
        final_network_mean,
        final_network_mean_se: (final_network_mean_var / m).sqrt(),
        final_network_mean_var,
        negativity_events: summaries.iter().map(|s| s.negativity_events).sum(),
        guard_events: summaries.iter().map(|s| s.guard_events).sum(),
        hull_violations: summaries.iter().map(|s| s.hull_violations).sum(),
        bounds,
    };
    if let Some(dir) = &out_dir {
        std::fs::write(
            dir.join("aggregate.json"),
            serde_json::to_string_pretty(&aggregate)?,
        )?;
    }
    Ok(RunReport {
        aggregate,
        summaries,
        traces,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn resolve_path(sc: &Scenario, p: &Path) -> PathBuf {
    match &sc.base_dir {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn bounds_for(resolved: &Resolved) -> BoundsOutcome {
    let rule = match &resolved.schedule {
        Some(StepsizeSchedule::Common(r)) => r,
        _ => return BoundsOutcome::Unavailable("bounds need a common step-size schedule".into()),
    };
    let sc = &resolved.scenario;
    match bound_constants(
        &resolved.model,
        &resolved.seq,
        rule,
        &resolved.initial.x,
        sc.horizon,
        sc.bound_mode,
    ) {
        Ok(b) => BoundsOutcome::Computed(Box::new(b)),
        Err(e) => BoundsOutcome::Unavailable(e.to_string()),
    }
}

/// Paired comparison of two scenarios that differ only in `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub sweep: String,
    pub trials: usize,
    pub k: Vec<usize>,
    /// Trial-mean MSE of `b` minus that of `a`, per recorded step.
    pub mse_difference: Vec<f64>,
    /// Paired trials with final MSE of `b` above `a`.
    pub b_higher: usize,
    pub a_higher: usize,
    pub ties: usize,
    /// Two-sided exact sign-test p-value over the untied pairs.
    pub sign_test_p: f64,
    pub var_x_star_a: f64,
    pub var_x_star_b: f64,
    pub final_mse_a: f64,
    pub final_mse_b: f64,
}

/// Dotted paths where the two scenarios differ outside `sweep`.
pub fn scenario_differences(a: &Scenario, b: &Scenario, sweep: &str) -> Result<Vec<String>> {
    let va = serde_json::to_value(a)?;
    let vb = serde_json::to_value(b)?;
    let mut paths = Vec::new();
    leaf_diffs(&va, &vb, String::new(), &mut paths);
    let inside = |p: &str, root: &str| {
        p == root || p.starts_with(&format!("{root}.")) || p.starts_with(&format!("{root}["))
    };
    Ok(paths
        .into_iter()
        .filter(|p| !inside(p, sweep) && !inside(p, "output") && !inside(p, "name"))
        .collect())
}

fn leaf_diffs(a: &Value, b: &Value, path: String, out: &mut Vec<String>) {
    let join = |key: &str| {
        if path.is_empty() {
            key.to_string()
        } else {
            format!("{path}.{key}")
        }
    };
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let keys: std::collections::BTreeSet<&String> = ma.keys().chain(mb.keys()).collect();
            for key in keys {
                match (ma.get(key), mb.get(key)) {
                    (Some(x), Some(y)) => leaf_diffs(x, y, join(key), out),
                    _ => out.push(join(key)),
                }
            }
        }
        (Value::Array(xa), Value::Array(xb)) if xa.len() == xb.len() => {
            for (i, (x, y)) in xa.iter().zip(xb).enumerate() {
                leaf_diffs(x, y, format!("{path}[{i}]"), out);
            }
        }
        _ if a != b => out.push(path),
        _ => {}
    }
}

/// Two-sided exact binomial sign test with `successes` out of `n`.
pub fn sign_test_p(successes: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let extreme = successes.max(n - successes);
    // log C(n, i) accumulated upward from i = 0
    let mut log_c = 0.0f64;
    let mut tail = 0.0f64;
    let base = n as f64 * 0.5f64.ln();
    for i in 0..=n {
        if i >= extreme {
            tail += (log_c + base).exp();
        }
        if i < n {
            log_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
    }
    (2.0 * tail).min(1.0)
}

/// Runs both scenarios on common random numbers and compares them.
pub fn compare(a: &Resolved, b: &Resolved, sweep: &str) -> Result<CompareReport> {
    let paths = scenario_differences(&a.scenario, &b.scenario, sweep)?;
    if !paths.is_empty() {
        return Err(Error::ScenarioMismatch {
            sweep: sweep.to_string(),
            paths,
        });
    }
    let opts = RunOptions::default();
    let ra = run(a, &opts)?;
    let rb = run(b, &opts)?;
    let (mut b_higher, mut a_higher, mut ties) = (0, 0, 0);
    for (sa, sb) in ra.summaries.iter().zip(&rb.summaries) {
        match sb.final_mse.partial_cmp(&sa.final_mse) {
            Some(std::cmp::Ordering::Greater) => b_higher += 1,
            Some(std::cmp::Ordering::Less) => a_higher += 1,
            _ => ties += 1,
        }
    }
    let (ga, gb) = (&ra.aggregate, &rb.aggregate);
    Ok(CompareReport {
        sweep: sweep.to_string(),
        trials: ga.trials,
        k: ga.k.clone(),
        mse_difference: gb
            .mean_mse
            .iter()
            .zip(&ga.mean_mse)
            .map(|(y, x)| y - x)
            .collect(),
        b_higher,
        a_higher,
        ties,
        sign_test_p: sign_test_p(b_higher, b_higher + a_higher),
        var_x_star_a: ga.final_network_mean_var,
        var_x_star_b: gb.final_network_mean_var,
        final_mse_a: *ga.mean_mse.last().expect("rows"),
        final_mse_b: *gb.mean_mse.last().expect("rows"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedVerdict {
    pub name: String,
    pub passed: bool,
    pub horizon_limited: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationBundle {
    pub verdicts: Vec<NamedVerdict>,
    pub passed: bool,
}

fn schedule_verdicts(resolved: &Resolved, schedule: &StepsizeSchedule) -> Vec<NamedVerdict> {
    let mut modes = vec![
        ("assumption1", ValidationMode::Assumption1),
        ("assumption3", ValidationMode::Assumption3),
    ];
    if matches!(schedule, StepsizeSchedule::PerAgent(_)) {
        modes.push(("corollary1c", ValidationMode::Corollary1c));
        modes.push(("corollary3c", ValidationMode::Corollary3c));
    }
    modes
        .into_iter()
        .map(|(name, mode)| {
            let v = validate_schedule(schedule, &resolved.model, resolved.seq.base(), mode);
            NamedVerdict {
                name: name.to_string(),
                passed: v.passed,
                horizon_limited: v.horizon_limited,
                reason: v.reason,
            }
        })
        .collect()
}

/// Summary of window certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub window: usize,
    pub windows_checked: usize,
    pub min_fiedler: f64,
    /// Certificates of disconnected windows.
    pub failures: Vec<ConnectivityCertificate>,
    pub passed: bool,
}

pub fn check_connectivity(seq: &TopologySequence, horizon: usize) -> ConnectivityReport {
    let horizon = horizon.max(1);
    let certs = certify_aligned_windows(seq, horizon);
    ConnectivityReport {
        window: seq.window(),
        windows_checked: certs.len(),
        min_fiedler: certs
            .iter()
            .map(|c| c.fiedler_value)
            .fold(f64::INFINITY, f64::min),
        passed: certs.iter().all(|c| c.connected),
        failures: certs.into_iter().filter(|c| !c.connected).collect(),
    }
}

/// Every admissibility and connectivity check, without simulating.
pub fn validate(resolved: &Resolved) -> ValidationBundle {
    let mut verdicts = match &resolved.schedule {
        Some(s) => schedule_verdicts(resolved, s),
        None => Vec::new(),
    };
    let horizon = match resolved.seq.generator() {
        SequenceGenerator::Static => resolved.seq.window(),
        _ => resolved.seq.horizon().unwrap_or(resolved.scenario.horizon),
    };
    let conn = check_connectivity(&resolved.seq, horizon);
    let reason = match conn.failures.first() {
        None => format!(
            "{} windows of length {} jointly connected, min λ₂ {:.4}",
            conn.windows_checked, conn.window, conn.min_fiedler
        ),
        Some(c) => format!(
            "{} of {} windows disconnected, first at k = {}",
            conn.failures.len(),
            conn.windows_checked,
            c.window_start
        ),
    };
    verdicts.push(NamedVerdict {
        name: "assumption2".into(),
        passed: conn.passed,
        horizon_limited: !matches!(resolved.seq.generator(), SequenceGenerator::Static),
        reason,
    });
    let passed = verdicts.iter().all(|v| v.passed);
    ValidationBundle { verdicts, passed }
}

/// Input of the `moments` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSpec {
    pub topology: TopologySpec,
    pub channel: ChannelSpec,
    /// Frozen state.
    pub x: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl MomentsSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, ChannelModel, PhysicalTopology)> {
        let path = path.as_ref();
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let topo = spec.topology.resolve(&dir)?;
        let model = spec.channel.resolve(topo.n_agents())?;
        Ok((spec, model, topo))
    }
}

/// Trial-mean final network mean rounded for display.
pub fn describe(aggregate: &Aggregate) -> String {
    format!(
        "{} trials, K = {}: V(0) = {:.4e}, mean V(K) = {:.4e}, final mean {:.6} ± {:.2e} (initial {:.6})",
        aggregate.trials,
        aggregate.horizon,
        aggregate.initial_v,
        aggregate.final_mean_v,
        aggregate.final_network_mean,
        aggregate.final_network_mean_se,
        aggregate.initial_average,
    )
}
