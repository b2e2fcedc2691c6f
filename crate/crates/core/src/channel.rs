//! Non-coherent over-the-air physical layer.
//!
//! Each step an agent transmits in slot `s1` with probability `p_i` and
//! listens in the other slot. Agent `i` hears the superposition of all
//! potential neighbors that picked the opposite slot, each scaled by an
//! independent Rayleigh coefficient `h_ij ~ CN(0, Λ_ij)`, plus receiver noise
//! `n_i ~ CN(0, σ_i²)`. Only the received power `|y_i|²` is used.
//!
//! Complex Gaussians follow the total-variance convention: real and imaginary
//! parts are independent `N(0, v/2)`, so `E|h_ij|² = Λ_ij`. The carrier is
//! the unit real symbol.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PhysicalTopology;

/// Fading variances, noise powers, transmit coefficient and slot
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    lambda: DMatrix<f64>,
    sigma2: Vec<f64>,
    rho: f64,
    p: Vec<f64>,
}

impl ChannelModel {
    pub fn new(lambda: DMatrix<f64>, sigma2: Vec<f64>, rho: f64, p: Vec<f64>) -> Result<Self> {
        let n = sigma2.len();
        if n == 0 {
            return Err(Error::invalid("sigma2", "at least one agent is required"));
        }
        if lambda.nrows() != n || lambda.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "lambda rows/cols",
                expected: n,
                got: lambda.nrows().max(lambda.ncols()),
            });
        }
        if p.len() != n {
            return Err(Error::DimensionMismatch {
                what: "slot probabilities",
                expected: n,
                got: p.len(),
            });
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::invalid("rho", format!("{rho} must be positive")));
        }
        for (i, &pi) in p.iter().enumerate() {
            if !(pi > 0.0 && pi < 1.0) {
                return Err(Error::invalid(
                    format!("p[{i}]"),
                    format!("{pi} is not in (0, 1)"),
                ));
            }
        }
        for (i, &s) in sigma2.iter().enumerate() {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid(
                    format!("sigma2[{i}]"),
                    format!("{s} must be nonnegative"),
                ));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let v = lambda[(i, j)];
                if i != j && !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::invalid(
                        format!("lambda[{i}][{j}]"),
                        format!("{v} must be nonnegative"),
                    ));
                }
                if (v - lambda[(j, i)]).abs() > 1e-12 * v.abs().max(1.0) {
                    return Err(Error::invalid(
                        format!("lambda[{i}][{j}]"),
                        "fading variances must be symmetric",
                    ));
                }
            }
        }
        Ok(Self {
            lambda,
            sigma2,
            rho,
            p,
        })
    }

    /// Same fading variance, noise power and slot probability for everyone.
    pub fn uniform(n: usize, lambda: f64, sigma2: f64, rho: f64, p: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { lambda }),
            vec![sigma2; n],
            rho,
            vec![p; n],
        )
    }

    pub fn n_agents(&self) -> usize {
        self.sigma2.len()
    }

    pub fn lambda(&self, i: usize, j: usize) -> f64 {
        self.lambda[(i, j)]
    }

    pub fn lambda_matrix(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn sigma2(&self, i: usize) -> f64 {
        self.sigma2[i]
    }

    pub fn sigma2_all(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn p(&self, i: usize) -> f64 {
        self.p[i]
    }

    pub fn p_all(&self) -> &[f64] {
        &self.p
    }

    /// `P(Γ_ij = 1) = p_i(1-p_j) + p_j(1-p_i)`, which also equals `E[Γ_ij²]`.
    pub fn slot_mismatch_prob(&self, i: usize, j: usize) -> f64 {
        let (pi, pj) = (self.p[i], self.p[j]);
        pi * (1.0 - pj) + pj * (1.0 - pi)
    }

    /// Expected link weight `ā_ij = ρ (p_i(1-p_j) + p_j(1-p_i)) Λ_ij` for a
    /// pair that is connected; callers zero it for absent edges.
    pub fn expected_weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        self.rho * self.slot_mismatch_prob(i, j) * self.lambda[(i, j)]
    }

    /// `Σ_j ā_ij` over the neighbors of `i` in `topo`.
    pub fn expected_degree(&self, topo: &PhysicalTopology, i: usize) -> f64 {
        topo.neighbors(i)
            .iter()
            .map(|&j| self.expected_weight(i, j))
            .sum()
    }

    /// `max_i Σ_j ā_ij`.
    pub fn max_expected_degree(&self, topo: &PhysicalTopology) -> f64 {
        (0..self.n_agents())
            .map(|i| self.expected_degree(topo, i))
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_dims(&self, topo: &PhysicalTopology) -> Result<()> {
        if topo.n_agents() != self.n_agents() {
            return Err(Error::DimensionMismatch {
                what: "topology agents vs channel model",
                expected: self.n_agents(),
                got: topo.n_agents(),
            });
        }
        Ok(())
    }
}

/// Draw of `CN(0, variance)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

/// What to do when a transmitter's state is negative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePolicy {
    /// Transmit `sqrt(ρ max(x, 0))`; the stored state stays unclamped.
    #[default]
    Clamp,
    /// Fail the step.
    Abort,
    /// Run on offset states (see the harness) and clamp with a warning.
    OffsetWarn,
}

impl std::str::FromStr for NegativePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clamp" => Ok(Self::Clamp),
            "abort" => Ok(Self::Abort),
            "offset-warn" => Ok(Self::OffsetWarn),
            other => Err(Error::invalid(
                "policy",
                format!("unknown policy `{other}`"),
            )),
        }
    }
}

/// Transmit power `ρ x_j` after applying the negativity policy.
pub fn transmit_power(rho: f64, x: f64, agent: usize, policy: NegativePolicy) -> Result<f64> {
    if x >= 0.0 {
        return Ok(rho * x);
    }
    match policy {
        NegativePolicy::Clamp => Ok(0.0),
        NegativePolicy::Abort => Err(Error::NegativeStateUnderAbortPolicy { agent, value: x }),
        NegativePolicy::OffsetWarn => {
            log::warn!("agent {agent} state {x} is negative; transmitting zero power");
            Ok(0.0)
        }
    }
}

/// All randomness of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDraw {
    /// `γ_i(k)`: true when agent `i` transmits in slot `s1`.
    pub gamma: Vec<bool>,
    /// `h_ij(k)`, populated for ordered pairs that are active edges.
    pub h: DMatrix<Complex64>,
    pub noise: Vec<Complex64>,
    pub active: PhysicalTopology,
}

impl RoundDraw {
    pub fn n_agents(&self) -> usize {
        self.gamma.len()
    }

    /// `Γ_ij = γ_i(1-γ_j) + γ_j(1-γ_i)`; zero on the diagonal.
    pub fn slot_mismatch(&self, i: usize, j: usize) -> f64 {
        if self.gamma[i] != self.gamma[j] {
            1.0
        } else {
            0.0
        }
    }

    /// Realized weight `a_ij(k) = ρ Γ_ij |h_ij|²` on active edges, else 0.
    pub fn realized_weight(&self, model: &ChannelModel, i: usize, j: usize) -> f64 {
        if !self.active.has_edge(i, j) {
            return 0.0;
        }
        model.rho() * self.slot_mismatch(i, j) * self.h[(i, j)].norm_sqr()
    }
}

/// Draw one step: slot choices, then fading for each active ordered pair
/// (row-major, neighbors ascending), then receiver noise for every agent.
pub fn draw_round<R: Rng + ?Sized>(
    model: &ChannelModel,
    topo: &PhysicalTopology,
    rng: &mut R,
) -> Result<RoundDraw> {
    model.check_dims(topo)?;
    let n = model.n_agents();
    let gamma: Vec<bool> = (0..n).map(|i| rng.random::<f64>() < model.p(i)).collect();
    let mut h = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 0..n {
        for &j in topo.neighbors(i) {
            h[(i, j)] = complex_gaussian(rng, model.lambda(i, j));
        }
    }
    let noise = (0..n)
        .map(|i| complex_gaussian(rng, model.sigma2(i)))
        .collect();
    Ok(RoundDraw {
        gamma,
        h,
        noise,
        active: topo.clone(),
    })
}

fn check_state_len(model: &ChannelModel, x: &[f64]) -> Result<()> {
    if x.len() != model.n_agents() {
        return Err(Error::DimensionMismatch {
            what: "state vector",
            expected: model.n_agents(),
            got: x.len(),
        });
    }
    Ok(())
}

/// `|Σ_j Γ_ij h_ij sqrt(ρ x_j) + n_i|²` by direct complex accumulation.
pub fn received_power_direct(
    model: &ChannelModel,
    draw: &RoundDraw,
    x: &[f64],
    i: usize,
    policy: NegativePolicy,
) -> Result<f64> {
    check_state_len(model, x)?;
    let mut y = draw.noise[i];
    for &j in draw.active.neighbors(i) {
        if draw.gamma[i] == draw.gamma[j] {
            continue;
        }
        let amplitude = transmit_power(model.rho(), x[j], j, policy)?.sqrt();
        y += draw.h[(i, j)] * amplitude;
    }
    Ok(y.norm_sqr())
}

/// Received power split into its four algebraic components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalBreakdown {
    /// `|y_i|²`, computed directly.
    pub power: f64,
    /// `Σ_j ρ x_j Γ_ij |h_ij|²`.
    pub linear_term: f64,
    /// `|n_i|²`.
    pub noise_sq: f64,
    /// `Σ_{j≠l} Y⁽¹⁾_{i,jl}`: cross products of distinct faded transmitters.
    pub cross_fading: f64,
    /// `2 Σ_j Y⁽²⁾_{ij}`: cross products of fading and noise.
    pub cross_noise: f64,
}

impl SignalBreakdown {
    pub fn terms_sum(&self) -> f64 {
        self.linear_term + self.noise_sq + self.cross_fading + self.cross_noise
    }
}

/// Received power computed term by term, alongside the direct value.
pub fn received_power_expanded(
    model: &ChannelModel,
    draw: &RoundDraw,
    x: &[f64],
    i: usize,
    policy: NegativePolicy,
) -> Result<SignalBreakdown> {
    let power = received_power_direct(model, draw, x, i, policy)?;
    let neighbors = draw.active.neighbors(i);
    let mut tx = Vec::with_capacity(neighbors.len());
    for &j in neighbors {
        let g = draw.slot_mismatch(i, j);
        let px = if g > 0.0 {
            transmit_power(model.rho(), x[j], j, policy)?
        } else {
            0.0
        };
        tx.push((j, g, px));
    }
    let n = draw.noise[i];
    let mut linear_term = 0.0;
    let mut cross_noise = 0.0;
    let mut cross_fading = 0.0;
    for &(j, gj, pj) in &tx {
        let hj = draw.h[(i, j)];
        linear_term += pj * gj * hj.norm_sqr();
        cross_noise += 2.0 * pj.sqrt() * gj * (hj.re * n.re + hj.im * n.im);
        for &(l, gl, pl) in &tx {
            if l == j {
                continue;
            }
            let hl = draw.h[(i, l)];
            cross_fading += (pj * pl).sqrt() * gj * gl * (hj.re * hl.re + hj.im * hl.im);
        }
    }
    Ok(SignalBreakdown {
        power,
        linear_term,
        noise_sq: n.norm_sqr(),
        cross_fading,
        cross_noise,
    })
}

/// `E[|y_i|² | F_k] = Σ_{j ∈ N_i} ā_ij x_j + σ_i²`.
pub fn conditional_mean_power(
    model: &ChannelModel,
    topo: &PhysicalTopology,
    x: &[f64],
    i: usize,
) -> f64 {
    topo.neighbors(i)
        .iter()
        .map(|&j| model.expected_weight(i, j) * x[j])
        .sum::<f64>()
        + model.sigma2(i)
}

/// Noise power given in linear units or as a decibel string (`"-60dB"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PowerSpec {
    Linear(f64),
    Text(String),
}

impl PowerSpec {
    pub fn linear(&self) -> Result<f64> {
        match self {
            PowerSpec::Linear(v) => Ok(*v),
            PowerSpec::Text(s) => parse_power(s),
        }
    }
}

/// Parses `"-60dB"`, `"0 dB"` or a bare linear number.
pub fn parse_power(text: &str) -> Result<f64> {
    let t = text.trim();
    let lower = t.to_ascii_lowercase();
    let bad = || Error::invalid("sigma2", format!("cannot parse `{text}`"));
    if let Some(db) = lower.strip_suffix("db") {
        let db: f64 = db.trim().parse().map_err(|_| bad())?;
        Ok(10f64.powf(db / 10.0))
    } else {
        t.parse().map_err(|_| bad())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent<T> {
    Same(T),
    Each(Vec<T>),
}

impl<T: Clone> PerAgent<T> {
    fn expand(&self, n: usize, field: &str) -> Result<Vec<T>> {
        match self {
            PerAgent::Same(v) => Ok(vec![v.clone(); n]),
            PerAgent::Each(v) if v.len() == n => Ok(v.clone()),
            PerAgent::Each(v) => Err(Error::invalid(
                field,
                format!("expected {n} entries, got {}", v.len()),
            )),
        }
    }
}

/// Fading variances: a constant, a dense matrix, or a default with
/// symmetric overrides `[i, j, value]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Constant(f64),
    Dense(Vec<Vec<f64>>),
    Overrides {
        default: f64,
        #[serde(default)]
        overrides: Vec<(usize, usize, f64)>,
    },
}

/// Config form of a [`ChannelModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default = "one")]
    pub rho: f64,
    pub p: PerAgent<f64>,
    pub sigma2: PerAgent<PowerSpec>,
    pub lambda: LambdaSpec,
}

fn one() -> f64 {
    1.0
}

impl ChannelSpec {
    pub fn resolve(&self, n: usize) -> Result<ChannelModel> {
        let p = self.p.expand(n, "channel.p")?;
        let sigma2 = self
            .sigma2
            .expand(n, "channel.sigma2")?
            .iter()
            .map(PowerSpec::linear)
            .collect::<Result<Vec<_>>>()?;
        let lambda = match &self.lambda {
            LambdaSpec::Constant(v) => DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { *v }),
            LambdaSpec::Dense(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::invalid(
                        "channel.lambda",
                        format!("expected a {n}x{n} matrix"),
                    ));
                }
                DMatrix::from_fn(n, n, |i, j| rows[i][j])
            }
            LambdaSpec::Overrides { default, overrides } => {
                let mut m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { *default });
                for &(i, j, v) in overrides {
                    if i >= n || j >= n {
                        return Err(Error::AgentOutOfRange {
                            index: i.max(j),
                            n_agents: n,
                        });
                    }
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
                m
            }
        };
        ChannelModel::new(lambda, sigma2, self.rho, p)
    }
}
