//! Expected Laplacians, consensus metrics, bound constants and Monte Carlo
//! moment estimators.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    conditional_mean_power, draw_round, received_power_direct, received_power_expanded,
    ChannelModel, NegativePolicy, RoundDraw,
};
use crate::error::{Error, Result};
use crate::graph::{PhysicalTopology, TopologySequence};
use crate::linalg;
use crate::protocol::StepsizeRule;

/// Expected weights and Laplacian of one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianSet {
    pub a_bar: DMatrix<f64>,
    pub degree: Vec<f64>,
    pub l_bar: DMatrix<f64>,
}

impl LaplacianSet {
    pub fn fiedler(&self) -> Result<f64> {
        linalg::fiedler(&self.l_bar)
    }

    pub fn norm(&self) -> Result<f64> {
        linalg::symmetric_norm(&self.l_bar)
    }

    /// `max(|1ᵀL̄|∞, |L̄1|∞)`.
    pub fn zero_sum_residual(&self) -> f64 {
        let n = self.l_bar.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            worst = worst.max(self.l_bar.row(i).sum().abs());
            worst = worst.max(self.l_bar.column(i).sum().abs());
        }
        worst
    }

    /// Realized `L(k) = D̄ - A(k)` for a draw.
    pub fn realized(&self, model: &ChannelModel, draw: &RoundDraw) -> DMatrix<f64> {
        let n = self.l_bar.nrows();
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            l[(i, i)] = self.degree[i];
            for &j in draw.active.neighbors(i) {
                l[(i, j)] = -draw.realized_weight(model, i, j);
            }
        }
        l
    }

    /// `ΔL(k) = L̄ - L(k)`.
    pub fn delta(&self, model: &ChannelModel, draw: &RoundDraw) -> DMatrix<f64> {
        &self.l_bar - self.realized(model, draw)
    }
}

pub fn expected_laplacian(model: &ChannelModel, topo: &PhysicalTopology) -> Result<LaplacianSet> {
    model.check_dims(topo)?;
    let n = model.n_agents();
    let mut a_bar = DMatrix::zeros(n, n);
    for (i, j) in topo.edges() {
        let w = model.expected_weight(i, j);
        a_bar[(i, j)] = w;
        a_bar[(j, i)] = w;
    }
    let degree: Vec<f64> = (0..n).map(|i| a_bar.row(i).sum()).collect();
    let l_bar = DMatrix::from_fn(n, n, |i, j| if i == j { degree[i] } else { -a_bar[(i, j)] });
    Ok(LaplacianSet {
        a_bar,
        degree,
        l_bar,
    })
}

/// Second-smallest eigenvalue of a symmetric matrix.
pub fn fiedler(l: &DMatrix<f64>) -> Result<f64> {
    linalg::fiedler(l)
}

/// `V = ‖x - mean(x) 1‖²`.
pub fn lyapunov(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean) * (v - mean)).sum()
}

pub fn network_mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub v: f64,
    pub mean: f64,
    /// `(x_i - initial average)²`; empty unless the trace keeps per-agent columns.
    pub mse: Vec<f64>,
    /// Cumulative negativity plus guard events.
    pub events: usize,
}

/// Per-step consensus metrics of one trial.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTrace {
    pub initial_average: f64,
    pub with_mse: bool,
    pub rows: Vec<TraceRow>,
}

impl MetricsTrace {
    pub fn new(x0: &[f64], with_mse: bool) -> Self {
        Self {
            initial_average: network_mean(x0),
            with_mse,
            rows: Vec::new(),
        }
    }

    pub fn record(&mut self, k: usize, x: &[f64], events: usize) {
        let avg = self.initial_average;
        self.rows.push(TraceRow {
            k,
            v: lyapunov(x),
            mean: network_mean(x),
            mse: if self.with_mse {
                x.iter().map(|v| (v - avg) * (v - avg)).collect()
            } else {
                Vec::new()
            },
            events,
        });
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Agent-averaged squared error to the initial average, per row.
    pub fn mean_mse(&self, n_agents: usize) -> Vec<f64> {
        let avg = self.initial_average;
        self.rows
            .iter()
            .map(|r| r.v / n_agents as f64 + (r.mean - avg) * (r.mean - avg))
            .collect()
    }

    /// Writes `k,V,mean,mse_1..mse_N,events`, the `mse` columns only when kept.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let with_mse = self.with_mse;
        let mut w = csv::Writer::from_writer(out);
        let n = self.rows.first().map_or(0, |r| r.mse.len());
        let mut header = vec!["k".to_string(), "V".into(), "mean".into()];
        if with_mse {
            header.extend((1..=n).map(|i| format!("mse_{i}")));
        }
        header.push("events".into());
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = vec![row.k.to_string(), fmt_f64(row.v), fmt_f64(row.mean)];
            if with_mse {
                rec.extend(row.mse.iter().map(|v| fmt_f64(*v)));
            }
            rec.push(row.events.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Constant convention for the fourth moments in the bound constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    /// `8Λ²` and `7σ⁴` as printed.
    #[serde(alias = "paper")]
    PaperLiteral,
    /// `2Λ²` and `σ⁴`, the values implied by `CN(0, Λ)` with total variance `Λ`.
    #[default]
    #[serde(alias = "consistent")]
    ConventionConsistent,
}

impl BoundMode {
    fn fading_fourth(self) -> f64 {
        match self {
            BoundMode::PaperLiteral => 8.0,
            BoundMode::ConventionConsistent => 2.0,
        }
    }

    fn noise_fourth(self) -> f64 {
        match self {
            BoundMode::PaperLiteral => 7.0,
            BoundMode::ConventionConsistent => 1.0,
        }
    }
}

impl std::str::FromStr for BoundMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper-literal" | "paper_literal" => Ok(BoundMode::PaperLiteral),
            "consistent" | "convention-consistent" | "convention_consistent" => {
                Ok(BoundMode::ConventionConsistent)
            }
            other => Err(Error::invalid(
                "bound_mode",
                format!("unknown mode {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Constants for the time-varying case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeVaryingBounds {
    pub window: usize,
    /// `C = sup_m α(mL)/α((m+1)L)`.
    pub c_ratio: f64,
    pub m_l: f64,
    pub b1: f64,
    /// `inf_m λ₂(Σ_{window m} L̄(i))`.
    pub inf_window_fiedler: f64,
    pub m2_bar: Interval,
    /// `M̄₂/N · Σα²`.
    pub variance_bound: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub mode: BoundMode,
    pub horizon: usize,
    pub c_l: f64,
    pub c_m1: f64,
    pub c_m2: f64,
    pub fiedler: f64,
    pub l_norm: f64,
    /// `Σ_t α²(t)`: exact partial sum to `horizon` plus an analytic tail bound.
    pub alpha_sq_sum: Interval,
    /// `sup_l Φ₁(l:0)`.
    pub phi1_prefix_sup: f64,
    /// `sup_{k,l} Φ₁(l:k)`.
    pub phi1_interval_sup: f64,
    pub m1_bar: Interval,
    /// `M̄₁/N · Σα²`.
    pub variance_bound: Interval,
    pub time_varying: TimeVaryingBounds,
}

fn all_pairs_constants(
    model: &ChannelModel,
    topo: &PhysicalTopology,
    mode: BoundMode,
    x0_max: f64,
) -> (f64, f64, f64) {
    let n = model.n_agents();
    let rho = model.rho();
    let (mut c_l, mut c_m1, mut c_m2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let nb = topo.neighbors(i);
        let mut m2_sum = 0.0;
        for &j in nb {
            let lam = model.lambda(i, j);
            let g = model.slot_mismatch_prob(i, j);
            let abar = model.expected_weight(i, j);
            c_l += mode.fading_fourth() * lam * lam * rho * rho * g - abar * abar;
            for &l in nb {
                if l != j {
                    c_m1 += 0.5
                        * rho
                        * rho
                        * lam
                        * model.lambda(i, l)
                        * g
                        * model.slot_mismatch_prob(i, l);
                }
            }
            m2_sum += 0.5 * rho * lam * model.sigma2(i) * g;
        }
        let s2 = model.sigma2(i);
        c_m2 += mode.noise_fourth() * s2 * s2 + 2.0 * m2_sum * x0_max;
    }
    (c_l, c_m1, c_m2)
}

/// Upper bound on `Σ_{t ≥ horizon} α(t)²` for a power-law rule.
fn power_law_tail_sq(rule: &StepsizeRule, horizon: usize) -> Option<f64> {
    match *rule {
        StepsizeRule::PowerLaw {
            exponent,
            scale,
            perturbation,
        } if exponent > 0.5 => {
            let lead = scale * (1.0 + perturbation.max(0.0));
            let u0 = (horizon + 1) as f64;
            // Σ_{u ≥ u0} u^{-2p} ≤ u0^{-2p} + ∫_{u0}^∞ u^{-2p} du
            let tail =
                u0.powf(-2.0 * exponent) + u0.powf(1.0 - 2.0 * exponent) / (2.0 * exponent - 1.0);
            Some(lead * lead * tail)
        }
        _ => None,
    }
}

/// True when `α` is nonincreasing from step `from` on.
fn decreasing_from(rule: &StepsizeRule, from: usize) -> bool {
    match *rule {
        StepsizeRule::PowerLaw {
            exponent,
            perturbation,
            ..
        } => {
            if exponent <= 0.0 {
                return exponent == 0.0 && perturbation >= 0.0;
            }
            let peak = if perturbation < 0.0 {
                -perturbation * (exponent + 1.0) / exponent
            } else {
                0.0
            };
            ((from + 1) as f64) >= peak
        }
        StepsizeRule::Explicit { .. } => true,
    }
}

/// Largest product of consecutive factors (the empty product counts as 1).
fn max_interval_product(factors: &[f64]) -> f64 {
    let mut best = 0.0f64;
    let mut run = 0.0f64;
    for f in factors {
        let lf = f.ln();
        run = (run + lf).max(lf);
        best = best.max(run);
    }
    best.exp()
}

fn max_prefix_product(factors: &[f64]) -> f64 {
    let mut prod = 1.0f64;
    let mut best = 1.0f64;
    for f in factors {
        prod *= f;
        best = best.max(prod);
    }
    best
}

/// Bound constants of the mean-square analysis.
///
/// Infinite sups are evaluated on `[0, horizon)`. Beyond the horizon every
/// per-step factor must already be at most 1 with `α` nonincreasing, in which
/// case the sups are exact and only `Σα²` carries a tail, bounded by an
/// integral for power laws. Otherwise `HorizonTooShort` is returned. Explicit
/// sequences end at their length and carry no tail.
pub fn bound_constants(
    model: &ChannelModel,
    seq: &TopologySequence,
    rule: &StepsizeRule,
    x0: &[f64],
    horizon: usize,
    mode: BoundMode,
) -> Result<BoundConstants> {
    let n = model.n_agents();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: n,
            got: x0.len(),
        });
    }
    let base = seq.base();
    let lap = expected_laplacian(model, base)?;
    let lambda2 = lap.fiedler()?;
    let l_norm = lap.norm()?;
    let x0_max = x0.iter().copied().fold(0.0, f64::max);
    let x0_sq: f64 = x0.iter().map(|v| v * v).sum();
    let (c_l, c_m1, c_m2) = all_pairs_constants(model, base, mode, x0_max);
    let c_noise = c_l + c_m1;

    let horizon = match rule {
        StepsizeRule::Explicit { values } => horizon.min(values.len()),
        StepsizeRule::PowerLaw { .. } => horizon,
    };
    if horizon == 0 {
        return Err(Error::HorizonTooShort("horizon is zero".into()));
    }
    let alpha: Vec<f64> = (0..horizon).map(|t| rule.value(t)).collect::<Result<_>>()?;
    let partial_sq: f64 = alpha.iter().map(|a| a * a).sum();
    let tail_sq = match rule {
        StepsizeRule::Explicit { .. } => 0.0,
        StepsizeRule::PowerLaw { .. } => power_law_tail_sq(rule, horizon)
            .ok_or_else(|| Error::HorizonTooShort("Σα² diverges for this exponent".into()))?,
    };
    let alpha_sq_sum = Interval {
        lo: partial_sq,
        hi: partial_sq + tail_sq,
    };

    // static case
    let phi1: Vec<f64> = alpha
        .iter()
        .map(|a| 1.0 - 2.0 * a * lambda2 + a * a * l_norm * l_norm + a * a * c_noise)
        .collect();
    let has_tail = matches!(rule, StepsizeRule::PowerLaw { .. });
    if has_tail {
        if lambda2 <= 0.0 {
            return Err(Error::HorizonTooShort(
                "λ₂(L̄) = 0: Φ₁ factors never drop below 1".into(),
            ));
        }
        let last = *phi1.last().expect("horizon > 0");
        if last > 1.0 || !decreasing_from(rule, horizon - 1) {
            return Err(Error::HorizonTooShort(format!(
                "Φ₁ factor at k = {} is {last}; extend the horizon",
                horizon - 1
            )));
        }
    }
    let phi1_prefix_sup = max_prefix_product(&phi1);
    let phi1_interval_sup = max_interval_product(&phi1);
    let m1 = |sq: f64| c_noise * (phi1_prefix_sup * x0_sq + phi1_interval_sup * c_m2 * sq) + c_m2;
    let m1_bar = Interval {
        lo: m1(alpha_sq_sum.lo),
        hi: m1(alpha_sq_sum.hi),
    };
    let variance_bound = Interval {
        lo: m1_bar.lo * alpha_sq_sum.lo / n as f64,
        hi: m1_bar.hi * alpha_sq_sum.hi / n as f64,
    };

    let time_varying = time_varying_bounds(
        model,
        seq,
        rule,
        &alpha,
        &lap,
        l_norm,
        x0_sq,
        c_noise,
        c_m2,
        tail_sq,
        alpha_sq_sum,
    )?;

    Ok(BoundConstants {
        mode,
        horizon,
        c_l,
        c_m1,
        c_m2,
        fiedler: lambda2,
        l_norm,
        alpha_sq_sum,
        phi1_prefix_sup,
        phi1_interval_sup,
        m1_bar,
        variance_bound,
        time_varying,
    })
}

#[allow(clippy::too_many_arguments)]
fn time_varying_bounds(
    model: &ChannelModel,
    seq: &TopologySequence,
    rule: &StepsizeRule,
    alpha: &[f64],
    base_lap: &LaplacianSet,
    l_norm: f64,
    x0_sq: f64,
    c_noise: f64,
    c_m2: f64,
    tail_sq: f64,
    alpha_sq_sum: Interval,
) -> Result<TimeVaryingBounds> {
    let n = model.n_agents();
    let window = seq.window().max(1);
    let horizon = alpha.len();
    let n_windows = horizon / window;
    if n_windows == 0 {
        return Err(Error::HorizonTooShort(format!(
            "horizon {horizon} shorter than window {window}"
        )));
    }
    let has_tail = matches!(rule, StepsizeRule::PowerLaw { .. });

    // inf over windows of λ₂(Σ L̄(i)); windows without failures equal L·L̄(base)
    let static_window = window as f64 * base_lap.fiedler()?;
    let mut inf_fiedler = if has_tail {
        static_window
    } else {
        f64::INFINITY
    };
    for m in 0..n_windows {
        let start = m * window;
        let failing =
            (start..start + window).any(|k| seq.failures_at(k).is_some_and(|f| !f.is_empty()));
        let value = if failing {
            let mut sum = DMatrix::zeros(n, n);
            for k in start..start + window {
                sum += expected_laplacian(model, &seq.active_topology(k))?.l_bar;
            }
            linalg::fiedler(&sum)?
        } else {
            static_window
        };
        inf_fiedler = inf_fiedler.min(value);
    }

    // sup_m α(mL)/α((m+1)L) over the horizon; power-law ratios tend to 1
    let alpha_at = |k: usize| -> Result<f64> {
        match alpha.get(k) {
            Some(a) => Ok(*a),
            None => rule.value(k),
        }
    };
    let mut c_ratio = 1.0f64;
    for m in 0..n_windows {
        let next = (m + 1) * window;
        if next >= horizon && !has_tail {
            break;
        }
        c_ratio = c_ratio.max(alpha_at(m * window)? / alpha_at(next)?);
    }
    let l_sup = l_norm.max(1.0);
    let two_l = 2 * window as i32;
    let m_l = c_ratio * c_ratio * (2f64.powi(two_l) - two_l as f64 - 1.0) * l_sup.powi(two_l);
    let b1 = m_l + c_ratio * c_ratio * c_noise;

    // ‖I - αL̄(k)‖ = max(1, αλ_max(k) - 1) ≤ max(1, αλ_max(base) - 1)
    let g = |a: f64| {
        let norm = (a * l_norm - 1.0).max(1.0);
        norm * norm + a * a * c_noise
    };
    let phi2 = |m: usize| -> Result<f64> {
        let a = alpha_at((m + 1) * window)?;
        Ok(1.0 - 2.0 * inf_fiedler * a + a * a * b1)
    };

    let mut x_m = x0_sq;
    let mut sup_e = x0_sq;
    for m in 0..n_windows {
        let start = m * window;
        // k0 in 0..L within the window
        let mut prod = 1.0;
        let mut noise = 0.0;
        let mut best_prod: f64 = 1.0;
        let mut best_noise: f64 = 0.0;
        for k0 in 1..window {
            let a = alpha[start + k0 - 1];
            let f = g(a);
            prod *= f;
            noise = noise * f + a * a * c_m2 * f;
            best_prod = best_prod.max(prod);
            best_noise = best_noise.max(noise);
        }
        sup_e = sup_e.max(best_prod * x_m + best_noise);

        let mut win_prod = 1.0;
        let mut win_noise = 0.0;
        for &a in &alpha[start..start + window] {
            let f = g(a);
            win_prod *= f;
            win_noise = win_noise * f + a * a * c_m2 * f;
        }
        let factor = if alpha[start] <= 1.0 {
            phi2(m)?
        } else {
            win_prod
        };
        x_m = factor * x_m + win_noise;
        sup_e = sup_e.max(x_m);
    }

    let mut sup_hi = sup_e;
    if has_tail {
        let a_end = alpha_at(n_windows * window)?;
        let ok = phi2(n_windows)? <= 1.0
            && a_end <= 1.0
            && a_end * l_norm <= 2.0
            && decreasing_from(rule, n_windows * window);
        if !ok {
            return Err(Error::HorizonTooShort(format!(
                "window factor at m = {n_windows} exceeds 1; extend the horizon"
            )));
        }
        let grow = (c_noise * tail_sq).exp();
        let carried = x_m + c_m2 * tail_sq * grow;
        sup_hi = sup_hi.max(grow * carried + c_m2 * tail_sq * grow);
    }
    let m2_bar = Interval {
        lo: c_noise * sup_e + c_m2,
        hi: c_noise * sup_hi + c_m2,
    };
    Ok(TimeVaryingBounds {
        window,
        c_ratio,
        m_l,
        b1,
        inf_window_fiedler: inf_fiedler,
        m2_bar,
        variance_bound: Interval {
            lo: m2_bar.lo * alpha_sq_sum.lo / n as f64,
            hi: m2_bar.hi * alpha_sq_sum.hi / n as f64,
        },
    })
}

/// One Monte Carlo moment estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub name: String,
    pub empirical: f64,
    pub std_error: f64,
    pub expected: f64,
    /// `|empirical - expected| / |expected|`, or the absolute error when the
    /// expectation is 0.
    pub rel_error: f64,
    pub pass: bool,
    /// Whether `pass` counts toward the report verdict.
    pub gated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub draws: usize,
    pub estimates: Vec<MomentEstimate>,
    pub all_passed: bool,
}

impl MomentReport {
    pub fn get(&self, name: &str) -> Option<&MomentEstimate> {
        self.estimates.iter().find(|e| e.name == name)
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    sum: f64,
    sum_sq: f64,
}

impl Acc {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn finish(&self, name: String, m: usize, expected: f64, gated: bool) -> MomentEstimate {
        let mf = m as f64;
        let mean = self.sum / mf;
        let var = ((self.sum_sq / mf - mean * mean) * mf / (mf - 1.0)).max(0.0);
        let se = (var / mf).sqrt();
        let err = (mean - expected).abs();
        MomentEstimate {
            name,
            empirical: mean,
            std_error: se,
            expected,
            rel_error: if expected != 0.0 {
                err / expected.abs()
            } else {
                err
            },
            pass: err <= 3.0 * se || err <= 1e-12 * expected.abs().max(1.0),
            gated,
        }
    }
}

/// Moments of one round with `x` frozen, over `draws` independent rounds.
///
/// Names: `power_i`, `v_i`, `cross_fading_i`, `cross_noise_i`,
/// `noise_sq_var_i` (against `σ⁴`), `noise_sq_var_literal_i` (against `7σ⁴`,
/// ungated), `gamma_sq_i_j`, `a_i_j`, `delta_l_i_j`, `fading_pair_i_j_l`
/// (against `½Λ_ij Λ_il`). Agents are 0-based.
pub fn estimate_conditional_moments<R: Rng + ?Sized>(
    model: &ChannelModel,
    topo: &PhysicalTopology,
    x: &[f64],
    draws: usize,
    rng: &mut R,
) -> Result<MomentReport> {
    model.check_dims(topo)?;
    let n = model.n_agents();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            what: "frozen state",
            expected: n,
            got: x.len(),
        });
    }
    if draws < 2 {
        return Err(Error::invalid("draws", "at least two draws required"));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| topo.neighbors(i).iter().map(move |&j| (i, j)))
        .collect();
    let triples: Vec<(usize, usize, usize)> = (0..n)
        .flat_map(|i| {
            let nb = topo.neighbors(i);
            nb.iter()
                .enumerate()
                .flat_map(move |(a, &j)| nb[a + 1..].iter().map(move |&l| (i, j, l)))
        })
        .collect();

    let mut power = vec![Acc::default(); n];
    let mut v = vec![Acc::default(); n];
    let mut cross_f = vec![Acc::default(); n];
    let mut cross_n = vec![Acc::default(); n];
    let mut noise_var = vec![Acc::default(); n];
    let mut gamma_sq = vec![Acc::default(); pairs.len()];
    let mut weight = vec![Acc::default(); pairs.len()];
    let mut delta = vec![Acc::default(); pairs.len()];
    let mut fading = vec![Acc::default(); triples.len()];

    for _ in 0..draws {
        let draw = draw_round(model, topo, rng)?;
        for i in 0..n {
            let p = received_power_direct(model, &draw, x, i, NegativePolicy::Clamp)?;
            let parts = received_power_expanded(model, &draw, x, i, NegativePolicy::Clamp)?;
            let realized: f64 = topo
                .neighbors(i)
                .iter()
                .map(|&j| draw.realized_weight(model, i, j) * x[j])
                .sum();
            power[i].push(p);
            v[i].push(p - model.sigma2(i) - realized);
            cross_f[i].push(parts.cross_fading);
            cross_n[i].push(parts.cross_noise);
            let c = parts.noise_sq - model.sigma2(i);
            noise_var[i].push(c * c);
        }
        for (idx, &(i, j)) in pairs.iter().enumerate() {
            let g = draw.slot_mismatch(i, j);
            let a = draw.realized_weight(model, i, j);
            gamma_sq[idx].push(g * g);
            weight[idx].push(a);
            delta[idx].push(model.expected_weight(i, j) - a);
        }
        for (idx, &(i, j, l)) in triples.iter().enumerate() {
            let (hj, hl) = (draw.h[(i, j)], draw.h[(i, l)]);
            let s = hj.re * hl.re + hj.im * hl.im;
            fading[idx].push(s * s);
        }
    }

    let mut estimates = Vec::new();
    for i in 0..n {
        let s2 = model.sigma2(i);
        estimates.push(power[i].finish(
            format!("power_{i}"),
            draws,
            conditional_mean_power(model, topo, x, i),
            true,
        ));
        estimates.push(v[i].finish(format!("v_{i}"), draws, 0.0, true));
        estimates.push(cross_f[i].finish(format!("cross_fading_{i}"), draws, 0.0, true));
        estimates.push(cross_n[i].finish(format!("cross_noise_{i}"), draws, 0.0, true));
        estimates.push(noise_var[i].finish(format!("noise_sq_var_{i}"), draws, s2 * s2, true));
        estimates.push(noise_var[i].finish(
            format!("noise_sq_var_literal_{i}"),
            draws,
            7.0 * s2 * s2,
            false,
        ));
    }
    for (idx, &(i, j)) in pairs.iter().enumerate() {
        estimates.push(gamma_sq[idx].finish(
            format!("gamma_sq_{i}_{j}"),
            draws,
            model.slot_mismatch_prob(i, j),
            true,
        ));
        estimates.push(weight[idx].finish(
            format!("a_{i}_{j}"),
            draws,
            model.expected_weight(i, j),
            true,
        ));
        estimates.push(delta[idx].finish(format!("delta_l_{i}_{j}"), draws, 0.0, true));
    }
    for (idx, &(i, j, l)) in triples.iter().enumerate() {
        let expected = 0.5 * model.lambda(i, j) * model.lambda(i, l);
        estimates.push(fading[idx].finish(
            format!("fading_pair_{i}_{j}_{l}"),
            draws,
            expected,
            true,
        ));
    }
    let all_passed = estimates.iter().filter(|e| e.gated).all(|e| e.pass);
    Ok(MomentReport {
        draws,
        estimates,
        all_passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamDomain};

    fn two_agent() -> (ChannelModel, PhysicalTopology) {
        (
            ChannelModel::uniform(2, 1.0, 0.0, 1.0, 0.5).unwrap(),
            PhysicalTopology::complete(2).unwrap(),
        )
    }

    #[test]
    fn two_agent_expected_laplacian() {
        let (model, topo) = two_agent();
        let lap = expected_laplacian(&model, &topo).unwrap();
        assert_eq!(lap.a_bar[(0, 1)], 0.5);
        assert_eq!(
            lap.l_bar,
            DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5])
        );
        assert!((lap.fiedler().unwrap() - 1.0).abs() < 1e-14);
        assert!(lap.zero_sum_residual() <= 1e-12);
    }

    #[test]
    fn disconnected_fiedler_is_zero() {
        let model = ChannelModel::uniform(4, 1.0, 0.0, 1.0, 0.5).unwrap();
        let topo = PhysicalTopology::new(4, [(0, 1), (2, 3)]).unwrap();
        let lap = expected_laplacian(&model, &topo).unwrap();
        assert!(lap.fiedler().unwrap().abs() < 1e-12);
    }

    #[test]
    fn lyapunov_examples() {
        assert_eq!(lyapunov(&[3.0; 4]), 0.0);
        assert_eq!(lyapunov(&[0.0, 2.0]), 2.0);
        // Σ (i - 3)² for i = 1..5
        let oracle: f64 = (1..=5).map(|i| ((i - 3) * (i - 3)) as f64).sum();
        assert_eq!(lyapunov(&[1.0, 2.0, 3.0, 4.0, 5.0]), oracle);
    }

    #[test]
    fn delta_laplacian_matches_weights() {
        let model = ChannelModel::uniform(4, 1.0, 0.1, 1.0, 0.5).unwrap();
        let topo = PhysicalTopology::complete(4).unwrap();
        let lap = expected_laplacian(&model, &topo).unwrap();
        let mut rng = stream(9, StreamDomain::Validation, 0);
        let draw = draw_round(&model, &topo, &mut rng).unwrap();
        let d = lap.delta(&model, &draw);
        for i in 0..4 {
            assert_eq!(d[(i, i)], 0.0);
            for j in topo.neighbors(i) {
                let want = draw.realized_weight(&model, i, *j) - model.expected_weight(i, *j);
                assert!((d[(i, *j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_agent_consistent_c_l_is_zero() {
        let (model, topo) = two_agent();
        let seq = TopologySequence::fixed(topo);
        let rule = StepsizeRule::power_law(0.75, 1.0);
        let b = bound_constants(
            &model,
            &seq,
            &rule,
            &[1.0, 2.0],
            2000,
            BoundMode::ConventionConsistent,
        )
        .unwrap();
        // per ordered pair: E[a²] - ā² = ρ² Γ̄ E|h|⁴ - ā² = 0.5·2 - 0.25
        let oracle = 2.0 * (2.0 * 0.5 - 0.25);
        assert!((b.c_l - oracle).abs() < 1e-15);
        assert_eq!(b.c_m1, 0.0);
        let lit = bound_constants(
            &model,
            &seq,
            &rule,
            &[1.0, 2.0],
            2000,
            BoundMode::PaperLiteral,
        )
        .unwrap();
        assert!((lit.c_l - 2.0 * (8.0 * 0.5 - 0.25)).abs() < 1e-15);
    }

    #[test]
    fn zero_channel_constants_vanish() {
        let model = ChannelModel::uniform(3, 0.0, 0.0, 1.0, 0.5).unwrap();
        let topo = PhysicalTopology::complete(3).unwrap();
        let (c_l, c_m1, c_m2) = all_pairs_constants(&model, &topo, BoundMode::PaperLiteral, 5.0);
        assert_eq!((c_l, c_m1, c_m2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn interval_products() {
        assert_eq!(max_interval_product(&[0.5, 0.5]), 1.0);
        assert!((max_interval_product(&[2.0, 0.9, 3.0, 0.1]) - 5.4).abs() < 1e-12);
        assert!((max_prefix_product(&[2.0, 0.25, 4.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn short_horizon_reported() {
        let model = ChannelModel::uniform(10, 1.0, 0.01, 1.0, 0.5).unwrap();
        let seq = TopologySequence::fixed(PhysicalTopology::ring(10).unwrap());
        let rule = StepsizeRule::power_law(0.75, 1.0);
        let x0: Vec<f64> = (1..=10).map(f64::from).collect();
        let err = bound_constants(&model, &seq, &rule, &x0, 5, BoundMode::ConventionConsistent);
        assert!(matches!(err, Err(Error::HorizonTooShort(_))));
    }

    #[test]
    fn ring_bounds_are_ordered_intervals() {
        let model = ChannelModel::uniform(10, 1.0, 0.01, 1.0, 0.5).unwrap();
        let seq = TopologySequence::fixed(PhysicalTopology::ring(10).unwrap());
        let rule = StepsizeRule::power_law(0.75, 1.0);
        let x0: Vec<f64> = (1..=10).map(f64::from).collect();
        let b = bound_constants(
            &model,
            &seq,
            &rule,
            &x0,
            20_000,
            BoundMode::ConventionConsistent,
        )
        .unwrap();
        assert!(b.m1_bar.lo <= b.m1_bar.hi && b.variance_bound.lo <= b.variance_bound.hi);
        assert!(b.time_varying.m2_bar.lo <= b.time_varying.m2_bar.hi);
        assert!(b.c_l >= 0.0 && b.c_m1 >= 0.0 && b.c_m2 >= 0.0);
    }

    #[test]
    fn trace_csv_header() {
        let mut t = MetricsTrace::new(&[0.0, 2.0], true);
        t.record(0, &[0.0, 2.0], 0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.starts_with("k,V,mean,mse_1,mse_2,events\n0,2.0,1.0,1.0,1.0,0\n"),
            "{text}"
        );
    }
}
