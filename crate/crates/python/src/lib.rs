//! Python bindings for `ota-consensus`.
//!
//! Scenario-level entry points take and return JSON-compatible values, so the
//! Python side works with plain dicts.

use ota_consensus::analysis;
use ota_consensus::channel::{ChannelModel, NegativePolicy};
use ota_consensus::graph::{PhysicalTopology, TopologySequence};
use ota_consensus::harness::{self, MomentsSpec, RunOptions, Scenario, TopologySpec};
use ota_consensus::protocol::{self, StateVector, StepsizeRule};
use ota_consensus::rng::{stream, trial_stream, StreamDomain};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(ota_consensus_py, ConsensusError, PyException);

fn err(e: ota_consensus::Error) -> PyErr {
    ConsensusError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| ConsensusError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[pyclass(name = "Topology", module = "ota_consensus_py", frozen)]
struct PyTopology(PhysicalTopology);

#[pymethods]
impl PyTopology {
    #[new]
    fn new(n_agents: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        PhysicalTopology::new(n_agents, edges)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn complete(n_agents: usize) -> PyResult<Self> {
        PhysicalTopology::complete(n_agents).map(Self).map_err(err)
    }

    #[staticmethod]
    fn ring(n_agents: usize) -> PyResult<Self> {
        PhysicalTopology::ring(n_agents).map(Self).map_err(err)
    }

    #[staticmethod]
    fn path(n_agents: usize) -> PyResult<Self> {
        PhysicalTopology::path(n_agents).map(Self).map_err(err)
    }

    #[staticmethod]
    fn bundled_fifty() -> Self {
        Self(PhysicalTopology::bundled_fifty())
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.0.n_agents()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.0.edges().collect()
    }

    fn neighbors(&self, i: usize) -> PyResult<Vec<usize>> {
        if i >= self.0.n_agents() {
            return Err(err(ota_consensus::Error::AgentOutOfRange {
                index: i,
                n_agents: self.0.n_agents(),
            }));
        }
        Ok(self.0.neighbors(i).to_vec())
    }

    fn is_connected(&self) -> bool {
        self.0.is_connected()
    }

    fn laplacian(&self) -> Vec<Vec<f64>> {
        rows(&self.0.laplacian())
    }

    /// Algebraic connectivity of the unweighted Laplacian.
    fn fiedler(&self) -> PyResult<f64> {
        analysis::fiedler(&self.0.laplacian()).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Topology(n_agents={}, edges={})",
            self.0.n_agents(),
            self.0.edge_count()
        )
    }
}

#[pyclass(name = "ChannelModel", module = "ota_consensus_py", frozen)]
struct PyChannelModel(ChannelModel);

#[pymethods]
impl PyChannelModel {
    /// Identical links: `Λ_ij = lam`, one noise power, one transmit probability.
    #[new]
    #[pyo3(signature = (n_agents, lam, sigma2, p, rho = 1.0))]
    fn new(n_agents: usize, lam: f64, sigma2: f64, p: f64, rho: f64) -> PyResult<Self> {
        ChannelModel::uniform(n_agents, lam, sigma2, rho, p)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.0.n_agents()
    }

    fn expected_laplacian(&self, topology: &PyTopology) -> PyResult<Vec<Vec<f64>>> {
        let set = analysis::expected_laplacian(&self.0, &topology.0).map_err(err)?;
        Ok(rows(&set.l_bar))
    }

    fn fiedler(&self, topology: &PyTopology) -> PyResult<f64> {
        analysis::expected_laplacian(&self.0, &topology.0)
            .and_then(|s| s.fiedler())
            .map_err(err)
    }

    /// One protocol step from state `x` at iteration `k` with step size `alpha`.
    #[pyo3(signature = (topology, x, alpha, k = 0, seed = 0, policy = "clamp"))]
    fn step(
        &self,
        topology: &PyTopology,
        x: Vec<f64>,
        alpha: f64,
        k: usize,
        seed: u64,
        policy: &str,
    ) -> PyResult<Vec<f64>> {
        let policy: NegativePolicy = policy.parse().map_err(err)?;
        let seq = TopologySequence::fixed(topology.0.clone());
        let mut state = StateVector::from_values(x).map_err(err)?;
        state.k = k;
        let rule = StepsizeRule::power_law(0.0, alpha);
        let mut rng = trial_stream(seed, k as u64);
        protocol::step(&self.0, &seq, &rule, &state, policy, &mut rng)
            .map(|out| out.state.x)
            .map_err(err)
    }
}

/// `V(x) = Σ (x_i - mean)²`.
#[pyfunction]
fn lyapunov(x: Vec<f64>) -> f64 {
    analysis::lyapunov(&x)
}

/// Runs a scenario given as a JSON string and returns the aggregate.
#[pyfunction]
#[pyo3(signature = (scenario, bounds = false))]
fn run_scenario<'py>(py: Python<'py>, scenario: &str, bounds: bool) -> PyResult<Bound<'py, PyAny>> {
    let resolved = Scenario::from_json(scenario)
        .and_then(|s| s.resolve())
        .map_err(err)?;
    let opts = RunOptions {
        keep_traces: false,
        compute_bounds: bounds,
    };
    let report = py.detach(|| harness::run(&resolved, &opts)).map_err(err)?;
    to_py(py, &report.aggregate)
}

#[pyfunction]
fn validate_scenario<'py>(py: Python<'py>, scenario: &str) -> PyResult<Bound<'py, PyAny>> {
    let resolved = Scenario::from_json(scenario)
        .and_then(|s| s.resolve())
        .map_err(err)?;
    to_py(py, &harness::validate(&resolved))
}

/// Monte Carlo check of the conditional moments for a frozen state.
#[pyfunction]
#[pyo3(signature = (spec, draws = 100_000))]
fn moments<'py>(py: Python<'py>, spec: &str, draws: usize) -> PyResult<Bound<'py, PyAny>> {
    let spec: MomentsSpec = serde_json::from_str(spec).map_err(|e| err(e.into()))?;
    let topo = spec
        .topology
        .resolve(std::path::Path::new("."))
        .map_err(err)?;
    let model = spec.channel.resolve(topo.n_agents()).map_err(err)?;
    let mut rng = stream(spec.seed, StreamDomain::Validation, 0);
    let report = py
        .detach(|| analysis::estimate_conditional_moments(&model, &topo, &spec.x, draws, &mut rng))
        .map_err(err)?;
    to_py(py, &report)
}

/// Topology from the JSON form used in scenario files.
#[pyfunction]
fn topology_from_json(spec: &str) -> PyResult<PyTopology> {
    let spec: TopologySpec = serde_json::from_str(spec).map_err(|e| err(e.into()))?;
    spec.resolve(std::path::Path::new("."))
        .map(PyTopology)
        .map_err(err)
}

#[pymodule]
fn ota_consensus_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ConsensusError", m.py().get_type::<ConsensusError>())?;
    m.add_class::<PyTopology>()?;
    m.add_class::<PyChannelModel>()?;
    m.add_function(wrap_pyfunction!(lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(moments, m)?)?;
    m.add_function(wrap_pyfunction!(topology_from_json, m)?)?;
    Ok(())
}
