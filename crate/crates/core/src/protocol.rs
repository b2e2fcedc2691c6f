//! State evolution under the over-the-air consensus update.
//!
//! Every non-failed agent applies
//!
//! ```text
//! x_i(k+1) = (1 - α(k) Σ_j ā_ij(k)) x_i(k) + α(k) (|y_i(k)|² - σ_i²)
//! ```
//!
//! where `ā_ij(k)` is the expected link weight on the active graph of step
//! `k`. Failed agents keep their state. The realized noise is returned in
//! the compact form `x(k+1) = (I - α L̄(k)) x(k) + α w(k)` for verification.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    self, draw_round, received_power_direct, ChannelModel, NegativePolicy, RoundDraw,
};
use crate::error::{Error, Result};
use crate::graph::{PhysicalTopology, TopologySequence};

/// Smallest `y⁽²⁾` the baseline update divides by.
pub const BASELINE_DIVISION_GUARD: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub x: Vec<f64>,
    pub k: usize,
    pub negativity_events: usize,
    pub x_min: f64,
    pub x_max: f64,
}

impl StateVector {
    /// Initial state at `k = 0`; every entry must lie in `[x_min, x_max]`.
    pub fn new(x: Vec<f64>, x_min: f64, x_max: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("initial", "state vector is empty"));
        }
        if x_min > x_max {
            return Err(Error::invalid(
                "x_bounds",
                format!("x_min {x_min} exceeds x_max {x_max}"),
            ));
        }
        if let Some((i, v)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= x_min && **v <= x_max))
        {
            return Err(Error::invalid(
                format!("initial[{i}]"),
                format!("{v} outside [{x_min}, {x_max}]"),
            ));
        }
        Ok(Self {
            x,
            k: 0,
            negativity_events: 0,
            x_min,
            x_max,
        })
    }

    /// Initial state with bounds taken from its own extremes.
    pub fn from_values(x: Vec<f64>) -> Result<Self> {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(x, lo, hi)
    }

    pub fn n_agents(&self) -> usize {
        self.x.len()
    }

    pub fn mean(&self) -> f64 {
        self.x.iter().sum::<f64>() / self.x.len() as f64
    }
}

/// One step-size rule `α(k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepsizeRule {
    /// `scale (k+1)^-exponent (1 + perturbation/(k+1))`.
    PowerLaw {
        exponent: f64,
        scale: f64,
        #[serde(default)]
        perturbation: f64,
    },
    /// Finite list of values; stepping past the end is an error.
    Explicit { values: Vec<f64> },
}

impl StepsizeRule {
    pub fn power_law(exponent: f64, scale: f64) -> Self {
        StepsizeRule::PowerLaw {
            exponent,
            scale,
            perturbation: 0.0,
        }
    }

    pub fn value(&self, k: usize) -> Result<f64> {
        match self {
            StepsizeRule::PowerLaw {
                exponent,
                scale,
                perturbation,
            } => {
                let u = (k + 1) as f64;
                Ok(scale * u.powf(-exponent) * (1.0 + perturbation / u))
            }
            StepsizeRule::Explicit { values } => {
                values.get(k).copied().ok_or(Error::ScheduleExhausted(k))
            }
        }
    }

    /// `Σ_{t<horizon} α(t)²`.
    pub fn partial_square_sum(&self, horizon: usize) -> Result<f64> {
        (0..horizon).map(|t| self.value(t).map(|a| a * a)).sum()
    }
}

/// Common or per-agent step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepsizeSchedule {
    Common(StepsizeRule),
    PerAgent(Vec<StepsizeRule>),
}

impl StepsizeSchedule {
    pub fn alpha(&self, i: usize, k: usize) -> Result<f64> {
        match self {
            StepsizeSchedule::Common(rule) => rule.value(k),
            StepsizeSchedule::PerAgent(rules) => rules
                .get(i)
                .ok_or(Error::AgentOutOfRange {
                    index: i,
                    n_agents: rules.len(),
                })?
                .value(k),
        }
    }

    pub fn rules(&self) -> Vec<&StepsizeRule> {
        match self {
            StepsizeSchedule::Common(r) => vec![r],
            StepsizeSchedule::PerAgent(rs) => rs.iter().collect(),
        }
    }
}

/// Realized noise of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDecomposition {
    /// `v_i = |y_i|² - σ_i² - Σ_j a_ij(k) x_j`: noise, non-coherent cross
    /// terms and any clamping residue.
    pub v: Vec<f64>,
    /// `(L̄(k) - L(k)) x = (A(k) - Ā(k)) x`.
    pub delta_l_x: Vec<f64>,
    /// `w = v + ΔL(k) x`.
    pub w: Vec<f64>,
}

/// Output of one protocol step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: StateVector,
    pub draw: RoundDraw,
    pub noise: NoiseDecomposition,
    /// Step sizes applied to each agent.
    pub alpha: Vec<f64>,
    /// Agents whose new state left the hull `[min_j x_j(k), max_j x_j(k)]`.
    pub hull_violations: usize,
}

fn check_alpha(alpha: f64, k: usize) -> Result<f64> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(alpha)
    } else {
        Err(Error::InadmissibleSchedule(format!(
            "α({k}) = {alpha} is not positive"
        )))
    }
}

/// One step with the common step size `rule`.
pub fn step<R: Rng + ?Sized>(
    model: &ChannelModel,
    seq: &TopologySequence,
    rule: &StepsizeRule,
    state: &StateVector,
    policy: NegativePolicy,
    rng: &mut R,
) -> Result<StepOutcome> {
    let a = check_alpha(rule.value(state.k)?, state.k)?;
    advance(model, seq, state, policy, rng, |_| Ok(a))
}

/// One step with per-agent step sizes `A(k) = diag(α_1(k), ..., α_N(k))`.
pub fn step_heterogeneous<R: Rng + ?Sized>(
    model: &ChannelModel,
    seq: &TopologySequence,
    schedule: &StepsizeSchedule,
    state: &StateVector,
    policy: NegativePolicy,
    rng: &mut R,
) -> Result<StepOutcome> {
    let k = state.k;
    advance(model, seq, state, policy, rng, |i| {
        check_alpha(schedule.alpha(i, k)?, k)
    })
}

/// Dispatches to [`step`] or [`step_heterogeneous`].
pub fn step_with_schedule<R: Rng + ?Sized>(
    model: &ChannelModel,
    seq: &TopologySequence,
    schedule: &StepsizeSchedule,
    state: &StateVector,
    policy: NegativePolicy,
    rng: &mut R,
) -> Result<StepOutcome> {
    match schedule {
        StepsizeSchedule::Common(rule) => step(model, seq, rule, state, policy, rng),
        StepsizeSchedule::PerAgent(_) => {
            step_heterogeneous(model, seq, schedule, state, policy, rng)
        }
    }
}

fn advance<R, F>(
    model: &ChannelModel,
    seq: &TopologySequence,
    state: &StateVector,
    policy: NegativePolicy,
    rng: &mut R,
    alpha_of: F,
) -> Result<StepOutcome>
where
    R: Rng + ?Sized,
    F: Fn(usize) -> Result<f64>,
{
    let n = model.n_agents();
    if state.n_agents() != n || seq.n_agents() != n {
        return Err(Error::DimensionMismatch {
            what: "state/topology agents vs channel model",
            expected: n,
            got: if state.n_agents() != n {
                state.n_agents()
            } else {
                seq.n_agents()
            },
        });
    }
    let k = state.k;
    let active = seq.active_topology(k);
    let draw = draw_round(model, &active, rng)?;
    let x = &state.x;

    let mut next = x.clone();
    let mut v = vec![0.0; n];
    let mut delta_l_x = vec![0.0; n];
    let mut alphas = vec![0.0; n];
    for i in 0..n {
        alphas[i] = alpha_of(i)?;
        if seq.is_node_failed(i, k) {
            continue;
        }
        let a = alphas[i];
        let mut expected_deg = 0.0;
        let mut realized_sum = 0.0;
        let mut delta = 0.0;
        for &j in active.neighbors(i) {
            let abar = model.expected_weight(i, j);
            let real = draw.realized_weight(model, i, j);
            expected_deg += abar;
            realized_sum += real * x[j];
            delta += (real - abar) * x[j];
        }
        let power = received_power_direct(model, &draw, x, i, policy)?;
        let innovation = power - model.sigma2(i);
        next[i] = (1.0 - a * expected_deg) * x[i] + a * innovation;
        v[i] = innovation - realized_sum;
        delta_l_x[i] = delta;
    }

    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hull_violations = next.iter().filter(|&&xi| xi < lo || xi > hi).count();
    let negatives = next.iter().filter(|&&xi| xi < 0.0).count();
    let w = v.iter().zip(&delta_l_x).map(|(a, b)| a + b).collect();

    Ok(StepOutcome {
        state: StateVector {
            x: next,
            k: k + 1,
            negativity_events: state.negativity_events + negatives,
            x_min: state.x_min,
            x_max: state.x_max,
        },
        draw,
        noise: NoiseDecomposition { v, delta_l_x, w },
        alpha: alphas,
        hull_violations,
    })
}

/// Output of one baseline step.
#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub state: StateVector,
    /// Agents whose update was skipped because `y⁽²⁾` fell below
    /// [`BASELINE_DIVISION_GUARD`].
    pub guarded: Vec<usize>,
}

/// Ratio-based full-duplex baseline.
///
/// Every agent sends its state and the constant 1 through the same fading
/// realization. Agent `i` receives
/// `y⁽¹⁾ = |Σ_j h_ij sqrt(x_j) + n_i|²` and `y⁽²⁾ = |Σ_j h_ij + n_i|²` over
/// its neighbors in `topo` and sets `x_i(k+1) = y⁽¹⁾ / y⁽²⁾`.
///
/// Draw order: fading row-major over ordered neighbor pairs, then noise.
pub fn step_baseline<R: Rng + ?Sized>(
    model: &ChannelModel,
    topo: &PhysicalTopology,
    state: &StateVector,
    policy: NegativePolicy,
    rng: &mut R,
) -> Result<BaselineOutcome> {
    model.check_dims(topo)?;
    let n = model.n_agents();
    let mut h = vec![Vec::new(); n];
    for (i, row) in h.iter_mut().enumerate() {
        for &j in topo.neighbors(i) {
            row.push((j, channel::complex_gaussian(rng, model.lambda(i, j))));
        }
    }
    let noise: Vec<_> = (0..n)
        .map(|i| channel::complex_gaussian(rng, model.sigma2(i)))
        .collect();

    let mut next = state.x.clone();
    let mut guarded = Vec::new();
    for i in 0..n {
        let mut s1 = noise[i];
        let mut s2 = noise[i];
        for &(j, hij) in &h[i] {
            s1 += hij * channel::transmit_power(1.0, state.x[j], j, policy)?.sqrt();
            s2 += hij;
        }
        let y2 = s2.norm_sqr();
        if y2 < BASELINE_DIVISION_GUARD {
            log::debug!(
                "baseline division guard hit for agent {i} at step {}",
                state.k
            );
            guarded.push(i);
            continue;
        }
        next[i] = s1.norm_sqr() / y2;
    }
    let negatives = next.iter().filter(|&&xi| xi < 0.0).count();
    Ok(BaselineOutcome {
        state: StateVector {
            x: next,
            k: state.k + 1,
            negativity_events: state.negativity_events + negatives,
            x_min: state.x_min,
            x_max: state.x_max,
        },
        guarded,
    })
}

/// Which admissibility condition to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// `Σα = ∞`, `Σα² < ∞`, and `α(k) Σ_j ā_ij ≤ 1` (per agent for
    /// per-agent schedules).
    Assumption1,
    /// `α(k+1) ≤ α(k)` and `limsup α(k)/α(k+1) < ∞`.
    Assumption3,
    /// `max_{i,j} |α_i(k) - α_j(k)| = o(Σ_i α_i(k))`.
    Corollary1c,
    /// `Σ_k max_{i,j} |α_i(k) - α_j(k)| < ∞`.
    Corollary3c,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleVerdict {
    pub mode: ValidationMode,
    pub passed: bool,
    /// True when the verdict rests on a finite-horizon heuristic.
    pub horizon_limited: bool,
    pub reason: String,
}

impl ScheduleVerdict {
    fn new(
        mode: ValidationMode,
        passed: bool,
        horizon_limited: bool,
        reason: impl Into<String>,
    ) -> Self {
        Self {
            mode,
            passed,
            horizon_limited,
            reason: reason.into(),
        }
    }
}

/// Admissibility verdict for `schedule` against `model` on `topo`.
///
/// Power-law rules are judged analytically. Explicit sequences are judged on
/// their finite horizon and flagged `horizon_limited`:
/// divergence/convergence of the sums is inferred from the log-log slope of
/// the second half of the sequence (slope in `(0.5, 1]` passes), and the
/// corollary conditions from the decay of the spread over the second half.
pub fn validate_schedule(
    schedule: &StepsizeSchedule,
    model: &ChannelModel,
    topo: &PhysicalTopology,
    mode: ValidationMode,
) -> ScheduleVerdict {
    let n = model.n_agents();
    match mode {
        ValidationMode::Assumption1 => {
            let degrees: Vec<f64> = (0..n).map(|i| model.expected_degree(topo, i)).collect();
            let d_max = degrees.iter().copied().fold(0.0, f64::max);
            let checks: Vec<(String, &StepsizeRule, f64)> = match schedule {
                StepsizeSchedule::Common(r) => vec![("α".to_string(), r, d_max)],
                StepsizeSchedule::PerAgent(rs) => rs
                    .iter()
                    .enumerate()
                    .map(|(i, r)| (format!("α_{i}"), r, degrees.get(i).copied().unwrap_or(0.0)))
                    .collect(),
            };
            if let StepsizeSchedule::PerAgent(rs) = schedule {
                if rs.len() != n {
                    return ScheduleVerdict::new(
                        mode,
                        false,
                        false,
                        format!("{} rules for {n} agents", rs.len()),
                    );
                }
            }
            let mut horizon_limited = false;
            let mut notes = Vec::new();
            for (name, rule, degree) in checks {
                let (ok, limited, why) = assumption1_rule(rule, degree);
                horizon_limited |= limited;
                if !ok {
                    return ScheduleVerdict::new(
                        mode,
                        false,
                        horizon_limited,
                        format!("{name}: {why}"),
                    );
                }
                if !why.is_empty() {
                    notes.push(format!("{name}: {why}"));
                }
            }
            let reason = if notes.is_empty() {
                "sum diverges, square sum converges, 1 - α Σā ≥ 0".to_string()
            } else {
                notes.join("; ")
            };
            ScheduleVerdict::new(mode, true, horizon_limited, reason)
        }
        ValidationMode::Assumption3 => {
            let mut horizon_limited = false;
            for (idx, rule) in schedule.rules().into_iter().enumerate() {
                let (ok, limited, why) = assumption3_rule(rule);
                horizon_limited |= limited;
                if !ok {
                    return ScheduleVerdict::new(
                        mode,
                        false,
                        horizon_limited,
                        format!("rule {idx}: {why}"),
                    );
                }
            }
            ScheduleVerdict::new(
                mode,
                true,
                horizon_limited,
                "nonincreasing with bounded consecutive ratio",
            )
        }
        ValidationMode::Corollary1c | ValidationMode::Corollary3c => spread_verdict(schedule, mode),
    }
}

/// `(passes, horizon_limited, explanation)`.
fn assumption1_rule(rule: &StepsizeRule, degree: f64) -> (bool, bool, String) {
    match *rule {
        StepsizeRule::PowerLaw {
            exponent,
            scale,
            perturbation,
        } => {
            if scale.is_nan() || scale <= 0.0 {
                return (false, false, format!("scale {scale} must be positive"));
            }
            if perturbation <= -1.0 {
                return (false, false, "α(0) is not positive".into());
            }
            if exponent > 1.0 {
                return (
                    false,
                    false,
                    format!("exponent {exponent} > 1: Σα converges"),
                );
            }
            if exponent <= 0.5 {
                return (
                    false,
                    false,
                    format!("exponent {exponent} ≤ 0.5: Σα² diverges"),
                );
            }
            let sup = power_law_sup(exponent, scale, perturbation);
            let worst = sup * degree;
            if worst > 1.0 + 1e-12 {
                return (false, false, format!("sup α(k)·Σā = {worst} > 1"));
            }
            let note = if (worst - 1.0).abs() <= 1e-12 {
                "sup α(k)·Σā attains 1 (boundary)".to_string()
            } else {
                String::new()
            };
            (true, false, note)
        }
        StepsizeRule::Explicit { ref values } => {
            if values.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                return (false, true, "non-positive value".into());
            }
            let worst = values.iter().copied().fold(0.0, f64::max) * degree;
            if worst > 1.0 + 1e-12 {
                return (false, true, format!("max α(k)·Σā = {worst} > 1 on horizon"));
            }
            match tail_slope(values) {
                Some(slope) if slope > 0.5 && slope <= 1.0 + 0.02 => (
                    true,
                    true,
                    format!("tail decay exponent ≈ {slope:.3} (horizon-limited)"),
                ),
                Some(slope) => (
                    false,
                    true,
                    format!("tail decay exponent ≈ {slope:.3} not in (0.5, 1]"),
                ),
                None => (false, true, "sequence too short to judge".into()),
            }
        }
    }
}

fn power_law_value(exponent: f64, scale: f64, perturbation: f64, u: f64) -> f64 {
    scale * u.powf(-exponent) * (1.0 + perturbation / u)
}

/// `sup_k α(k)` of a power-law rule (`u = k + 1 ≥ 1`).
fn power_law_sup(exponent: f64, scale: f64, perturbation: f64) -> f64 {
    if exponent < 0.0 {
        return f64::INFINITY;
    }
    let at = |u: f64| power_law_value(exponent, scale, perturbation, u);
    let mut best = at(1.0);
    if perturbation < 0.0 && exponent > 0.0 {
        // stationary point of u^-p (1 + c/u)
        let u_star = -perturbation * (exponent + 1.0) / exponent;
        if u_star > 1.0 {
            best = best.max(at(u_star.floor())).max(at(u_star.ceil()));
        }
    }
    best
}

fn assumption3_rule(rule: &StepsizeRule) -> (bool, bool, String) {
    match *rule {
        StepsizeRule::PowerLaw {
            exponent,
            scale,
            perturbation,
        } => {
            if exponent < 0.0 {
                return (false, false, "increasing sequence".into());
            }
            let at = |u: f64| power_law_value(exponent, scale, perturbation, u);
            // u^-p (1 + c/u) is unimodal; it is nonincreasing from u = 1 iff the first step does not rise
            if at(2.0) > at(1.0) {
                return (
                    false,
                    false,
                    format!("α(1) = {} > α(0) = {}", at(2.0), at(1.0)),
                );
            }
            (true, false, String::new())
        }
        StepsizeRule::Explicit { ref values } => {
            if let Some(k) = values.windows(2).position(|w| w[1] > w[0]) {
                return (false, true, format!("α({}) > α({k})", k + 1));
            }
            let ratio = values.windows(2).map(|w| w[0] / w[1]).fold(1.0, f64::max);
            if !ratio.is_finite() {
                return (false, true, "unbounded consecutive ratio".into());
            }
            (
                true,
                true,
                format!("max consecutive ratio {ratio:.4} on horizon"),
            )
        }
    }
}

/// Least-squares slope of `-ln α` against `ln(k+1)` over the second half.
fn tail_slope(values: &[f64]) -> Option<f64> {
    if values.len() < 8 {
        return None;
    }
    let start = values.len() / 2;
    let pts: Vec<(f64, f64)> = values[start..]
        .iter()
        .enumerate()
        .map(|(o, &a)| (((start + o + 1) as f64).ln(), -a.ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn spread_verdict(schedule: &StepsizeSchedule, mode: ValidationMode) -> ScheduleVerdict {
    let rules = match schedule {
        StepsizeSchedule::Common(_) => {
            return ScheduleVerdict::new(mode, true, false, "common step size: zero spread");
        }
        StepsizeSchedule::PerAgent(rules) => rules,
    };
    let laws: Option<Vec<(f64, f64, f64)>> = rules
        .iter()
        .map(|r| match *r {
            StepsizeRule::PowerLaw {
                exponent,
                scale,
                perturbation,
            } => Some((exponent, scale, perturbation)),
            StepsizeRule::Explicit { .. } => None,
        })
        .collect();

    if let Some(laws) = laws {
        // The leading term s (k+1)^-p dominates; the spread is o(Σα) (and
        // summable) iff every agent shares (p, s), leaving an O(k^{-p-1}) gap.
        let (p0, s0, _) = laws[0];
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        if let Some(i) = laws
            .iter()
            .position(|&(p, s, _)| !close(p, p0) || !close(s, s0))
        {
            let (p, s, _) = laws[i];
            return ScheduleVerdict::new(
                mode,
                false,
                false,
                format!(
                    "agent {i} leading term {s}(k+1)^-{p} differs from agent 0's {s0}(k+1)^-{p0}"
                ),
            );
        }
        let summable = p0 > 0.0;
        return match mode {
            ValidationMode::Corollary3c if !summable => ScheduleVerdict::new(
                mode,
                false,
                false,
                "spread decays like (k+1)^-(p+1) with p ≤ 0: not summable",
            ),
            _ => ScheduleVerdict::new(
                mode,
                true,
                false,
                format!("shared leading term; spread is O((k+1)^-{:.3})", p0 + 1.0),
            ),
        };
    }

    // explicit sequences: judge on the common finite horizon
    let horizon = rules
        .iter()
        .map(|r| match r {
            StepsizeRule::Explicit { values } => values.len(),
            StepsizeRule::PowerLaw { .. } => usize::MAX,
        })
        .min()
        .unwrap_or(0);
    if horizon < 8 {
        return ScheduleVerdict::new(mode, false, true, "sequence too short to judge");
    }
    let spread = |k: usize| {
        let vals: Vec<f64> = rules
            .iter()
            .map(|r| r.value(k).unwrap_or(f64::NAN))
            .collect();
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        (hi - lo, vals.iter().sum::<f64>())
    };
    let (mid, last) = (horizon / 2, horizon - 1);
    let (d_mid, s_mid) = spread(mid);
    let (d_last, s_last) = spread(last);
    let negligible = |d: f64, s: f64| d <= 1e-12 * s.abs().max(f64::MIN_POSITIVE);
    let passed = match mode {
        ValidationMode::Corollary1c => {
            negligible(d_last, s_last) || d_last / s_last <= 0.5 * d_mid / s_mid
        }
        _ => negligible(d_last, s_last) || (last as f64) * d_last <= 0.5 * (mid as f64) * d_mid,
    };
    ScheduleVerdict::new(
        mode,
        passed,
        true,
        format!("spread {d_mid:.3e} at k={mid}, {d_last:.3e} at k={last} (horizon-limited)"),
    )
}
