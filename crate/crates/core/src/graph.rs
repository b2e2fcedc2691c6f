//! Physical and time-varying communication topologies.
//!
//! Agents are indexed from 0. Edges are unordered pairs stored as
//! `(min, max)`; a [`TopologySequence`] layers per-step node and link
//! failures on top of a fixed base graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default tolerance on the Fiedler value below which a graph is reported
/// disconnected.
pub const CONNECTIVITY_TOL: f64 = 1e-9;

/// Regenerations allowed per window before sampled generation gives up.
pub const CERTIFICATION_RETRY_CAP: usize = 100;

pub type Edge = (usize, usize);

fn normalize(i: usize, j: usize) -> Edge {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Undirected graph without self-loops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TopologyFile", into = "TopologyFile")]
pub struct PhysicalTopology {
    n_agents: usize,
    edges: BTreeSet<Edge>,
    neighbors: Vec<Vec<usize>>,
}

/// On-disk form: `{"n_agents": N, "edges": [[i, j], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyFile {
    pub n_agents: usize,
    pub edges: Vec<[usize; 2]>,
}

impl TryFrom<TopologyFile> for PhysicalTopology {
    type Error = Error;

    fn try_from(file: TopologyFile) -> Result<Self> {
        PhysicalTopology::new(file.n_agents, file.edges.iter().map(|e| (e[0], e[1])))
    }
}

impl From<PhysicalTopology> for TopologyFile {
    fn from(topo: PhysicalTopology) -> Self {
        TopologyFile {
            n_agents: topo.n_agents,
            edges: topo.edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }
}

impl PhysicalTopology {
    pub fn new(n_agents: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::invalid("n_agents", "must be positive"));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            for index in [i, j] {
                if index >= n_agents {
                    return Err(Error::AgentOutOfRange { index, n_agents });
                }
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            set.insert(normalize(i, j));
        }
        Ok(Self::from_normalized(n_agents, set))
    }

    fn from_normalized(n_agents: usize, edges: BTreeSet<Edge>) -> Self {
        let mut neighbors = vec![Vec::new(); n_agents];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Self {
            n_agents,
            edges,
            neighbors,
        }
    }

    pub fn empty(n_agents: usize) -> Result<Self> {
        Self::new(n_agents, std::iter::empty())
    }

    pub fn complete(n_agents: usize) -> Result<Self> {
        Self::new(
            n_agents,
            (0..n_agents).flat_map(|i| ((i + 1)..n_agents).map(move |j| (i, j))),
        )
    }

    /// Cycle `0-1-...-(n-1)-0`. For `n <= 2` this degenerates to a path.
    pub fn ring(n_agents: usize) -> Result<Self> {
        Self::new(
            n_agents,
            (0..n_agents)
                .map(|i| (i, (i + 1) % n_agents))
                .filter(|(i, j)| i != j),
        )
    }

    pub fn path(n_agents: usize) -> Result<Self> {
        Self::new(n_agents, (1..n_agents).map(|i| (i - 1, i)))
    }

    /// Bundled 50-agent connected graph used as the default base topology of
    /// the time-varying scenarios. It is a stand-in with moderate density
    /// (random geometric construction), not a reproduction of any specific
    /// published figure.
    pub fn bundled_fifty() -> Self {
        let file: TopologyFile = serde_json::from_str(include_str!("../data/base_50.json"))
            .expect("bundled topology parses");
        PhysicalTopology::try_from(file).expect("bundled topology is valid")
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> impl ExactSizeIterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Potential neighbor set of agent `i`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.edges.contains(&normalize(i, j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Unweighted Laplacian `D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_agents;
        let mut l = DMatrix::zeros(n, n);
        for &(i, j) in &self.edges {
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
        }
        l
    }

    /// Breadth-first reachability from agent 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_agents];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n_agents
    }

    /// Graph with the given node failures and link failures removed.
    /// Every edge incident to a failed node is dropped.
    pub fn without(&self, failed_nodes: &BTreeSet<usize>, failed_links: &BTreeSet<Edge>) -> Self {
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|(i, j)| {
                !failed_nodes.contains(i)
                    && !failed_nodes.contains(j)
                    && !failed_links.contains(&(*i, *j))
            })
            .collect();
        Self::from_normalized(self.n_agents, edges)
    }

    /// Induced subgraph on `picked`, keeping all agents in the index space.
    pub fn induced(&self, picked: &[bool]) -> Self {
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|&(i, j)| picked[i] && picked[j])
            .collect();
        Self::from_normalized(self.n_agents, edges)
    }

    pub fn union(&self, other: &PhysicalTopology) -> Self {
        debug_assert_eq!(self.n_agents, other.n_agents);
        let edges = self.edges.union(&other.edges).copied().collect();
        Self::from_normalized(self.n_agents, edges)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Failures applied at one step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFailures {
    #[serde(default)]
    pub failed_nodes: BTreeSet<usize>,
    #[serde(default, with = "edge_list")]
    pub failed_links: BTreeSet<Edge>,
}

impl StepFailures {
    pub fn is_empty(&self) -> bool {
        self.failed_nodes.is_empty() && self.failed_links.is_empty()
    }
}

mod edge_list {
    use super::{normalize, Edge};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeSet;

    pub fn serialize<S: Serializer>(edges: &BTreeSet<Edge>, s: S) -> Result<S::Ok, S::Error> {
        edges
            .iter()
            .map(|&(i, j)| [i, j])
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeSet<Edge>, D::Error> {
        let raw = Vec::<[usize; 2]>::deserialize(d)?;
        Ok(raw.into_iter().map(|[i, j]| normalize(i, j)).collect())
    }
}

/// How a sequence was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceGenerator {
    Static,
    InducedSubgraphSampling { q: f64 },
    Explicit,
}

/// Time-varying topology: a base graph plus per-step failures.
///
/// Steps without an entry in the failure table use the base graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySequence {
    base: PhysicalTopology,
    window: usize,
    generator: SequenceGenerator,
    horizon: Option<usize>,
    failures: BTreeMap<usize, StepFailures>,
}

/// Replay format: `{base, window, events: [{k, failed_nodes, failed_links}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceFile {
    pub base: PhysicalTopology,
    pub window: usize,
    #[serde(default = "default_generator")]
    pub generator: SequenceGenerator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub events: Vec<SequenceEvent>,
}

fn default_generator() -> SequenceGenerator {
    SequenceGenerator::Explicit
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceEvent {
    pub k: usize,
    #[serde(flatten)]
    pub failures: StepFailures,
}

impl TopologySequence {
    /// Time-invariant sequence over `base`.
    pub fn fixed(base: PhysicalTopology) -> Self {
        Self {
            base,
            window: 1,
            generator: SequenceGenerator::Static,
            horizon: None,
            failures: BTreeMap::new(),
        }
    }

    /// Sequence with explicit per-step failures. Failed links must be edges of
    /// the base graph.
    pub fn with_failures(
        base: PhysicalTopology,
        window: usize,
        horizon: Option<usize>,
        failures: impl IntoIterator<Item = (usize, StepFailures)>,
    ) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("window", "must be at least 1"));
        }
        let n = base.n_agents();
        let mut table = BTreeMap::new();
        for (k, step) in failures {
            for &i in &step.failed_nodes {
                if i >= n {
                    return Err(Error::AgentOutOfRange {
                        index: i,
                        n_agents: n,
                    });
                }
            }
            for &(i, j) in &step.failed_links {
                if !base.has_edge(i, j) {
                    return Err(Error::invalid(
                        format!("events[k={k}].failed_links"),
                        format!("({i}, {j}) is not an edge of the base graph"),
                    ));
                }
            }
            if !step.is_empty() {
                table
                    .entry(k)
                    .or_insert_with(StepFailures::default)
                    .merge(step);
            }
        }
        Ok(Self {
            base,
            window,
            generator: SequenceGenerator::Explicit,
            horizon,
            failures: table,
        })
    }

    pub fn base(&self) -> &PhysicalTopology {
        &self.base
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    pub fn generator(&self) -> &SequenceGenerator {
        &self.generator
    }

    pub fn n_agents(&self) -> usize {
        self.base.n_agents()
    }

    pub fn failures_at(&self, k: usize) -> Option<&StepFailures> {
        self.failures.get(&k)
    }

    pub fn is_node_failed(&self, i: usize, k: usize) -> bool {
        self.failures
            .get(&k)
            .is_some_and(|f| f.failed_nodes.contains(&i))
    }

    /// Communication graph at step `k`: the base graph minus failed links and
    /// every edge incident to a failed node.
    pub fn active_topology(&self, k: usize) -> PhysicalTopology {
        match self.failures.get(&k) {
            Some(f) => self.base.without(&f.failed_nodes, &f.failed_links),
            None => self.base.clone(),
        }
    }

    pub fn to_file(&self) -> SequenceFile {
        SequenceFile {
            base: self.base.clone(),
            window: self.window,
            generator: self.generator.clone(),
            horizon: self.horizon,
            events: self
                .failures
                .iter()
                .map(|(&k, f)| SequenceEvent {
                    k,
                    failures: f.clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: SequenceFile) -> Result<Self> {
        let generator = file.generator.clone();
        let mut seq = Self::with_failures(
            file.base,
            file.window,
            file.horizon,
            file.events.into_iter().map(|e| (e.k, e.failures)),
        )?;
        seq.generator = generator;
        Ok(seq)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file(serde_json::from_str(&text)?)
    }
}

impl StepFailures {
    fn merge(&mut self, other: StepFailures) {
        self.failed_nodes.extend(other.failed_nodes);
        self.failed_links.extend(other.failed_links);
    }
}

/// Result of a joint-connectivity check over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityCertificate {
    pub window_start: usize,
    pub window_len: usize,
    pub fiedler_value: f64,
    pub connected: bool,
}

/// Union graph of steps `window_start .. window_start + len`.
pub fn window_union(seq: &TopologySequence, window_start: usize, len: usize) -> PhysicalTopology {
    let mut edges = BTreeSet::new();
    for k in window_start..window_start + len {
        match seq.failures.get(&k) {
            None => return seq.base.clone(),
            Some(_) => edges.extend(seq.active_topology(k).edges()),
        }
    }
    PhysicalTopology::from_normalized(seq.n_agents(), edges)
}

/// Joint connectivity of `G(k) ∪ ... ∪ G(k + len - 1)`.
///
/// Connectivity is decided by the Fiedler value of the unweighted union
/// Laplacian and cross-checked against breadth-first reachability. A single
/// agent is trivially connected and reports a Fiedler value of 0.
pub fn is_jointly_connected(
    seq: &TopologySequence,
    window_start: usize,
    len: usize,
) -> ConnectivityCertificate {
    let union = window_union(seq, window_start, len.max(1));
    certify(&union, window_start, len)
}

fn certify(union: &PhysicalTopology, window_start: usize, len: usize) -> ConnectivityCertificate {
    let bfs = union.is_connected();
    if union.n_agents() < 2 {
        return ConnectivityCertificate {
            window_start,
            window_len: len,
            fiedler_value: 0.0,
            connected: bfs,
        };
    }
    let fiedler_value =
        linalg::fiedler(&union.laplacian()).expect("unweighted Laplacian is symmetric");
    let connected = fiedler_value > CONNECTIVITY_TOL;
    assert_eq!(
        connected, bfs,
        "spectral and reachability verdicts disagree (lambda_2 = {fiedler_value:e})"
    );
    ConnectivityCertificate {
        window_start,
        window_len: len,
        fiedler_value,
        connected,
    }
}

/// Certificates for every aligned window `[mL, (m+1)L)` inside `horizon`.
pub fn certify_aligned_windows(
    seq: &TopologySequence,
    horizon: usize,
) -> Vec<ConnectivityCertificate> {
    let l = seq.window();
    let starts: Vec<usize> = (0..horizon).step_by(l).collect();
    starts
        .into_par_iter()
        .map(|start| is_jointly_connected(seq, start, l.min(horizon - start)))
        .collect()
}

/// Random L-connected sequence built by sampling agents from `base`.
///
/// Within each window `[nL, (n+1)L)`, every step but the last picks each
/// agent independently with probability `q`. The closing step picks every
/// agent not yet picked in the window; each already-picked agent joins it
/// with probability `q`, and if none does, one of them is chosen uniformly.
/// The active graph of a step is the subgraph induced
/// by its picked agents; unpicked agents are recorded as node failures.
///
/// The horizon is rounded up to a multiple of `L` so every window is
/// complete. A window whose union is disconnected is redrawn, up to
/// [`CERTIFICATION_RETRY_CAP`] times.
///
/// Randomness is consumed per step as one uniform per agent in index order.
/// Closing steps draw one uniform per already-picked agent, then an index
/// draw only when none was kept.
pub fn generate_sampled_sequence<R: Rng + ?Sized>(
    base: &PhysicalTopology,
    window: usize,
    q: f64,
    horizon: usize,
    rng: &mut R,
) -> Result<TopologySequence> {
    if window == 0 {
        return Err(Error::invalid("window", "must be at least 1"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid("q", format!("{q} is not in (0, 1)")));
    }
    if !base.is_connected() {
        return Err(Error::BaseDisconnected);
    }
    let n = base.n_agents();
    let n_windows = horizon.div_ceil(window);
    let mut failures = BTreeMap::new();

    for w in 0..n_windows {
        let start = w * window;
        let mut accepted = None;
        for _attempt in 0..CERTIFICATION_RETRY_CAP {
            let picks = sample_window(n, window, q, rng);
            let union = picks
                .iter()
                .map(|p| base.induced(p))
                .reduce(|a, b| a.union(&b))
                .expect("window is non-empty");
            // reachability here; the spectral certificate is left to the checker
            if union.is_connected() {
                accepted = Some(picks);
                break;
            }
        }
        let picks = accepted.ok_or(Error::CertificationFailed {
            window_start: start,
            attempts: CERTIFICATION_RETRY_CAP,
        })?;
        for (offset, picked) in picks.iter().enumerate() {
            let failed_nodes: BTreeSet<usize> = (0..n).filter(|&i| !picked[i]).collect();
            if !failed_nodes.is_empty() {
                failures.insert(
                    start + offset,
                    StepFailures {
                        failed_nodes,
                        failed_links: BTreeSet::new(),
                    },
                );
            }
        }
    }

    Ok(TopologySequence {
        base: base.clone(),
        window,
        generator: SequenceGenerator::InducedSubgraphSampling { q },
        horizon: Some(n_windows * window),
        failures,
    })
}

fn sample_window<R: Rng + ?Sized>(n: usize, window: usize, q: f64, rng: &mut R) -> Vec<Vec<bool>> {
    let mut picks = Vec::with_capacity(window);
    let mut seen = vec![false; n];
    for _ in 0..window - 1 {
        let picked: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < q).collect();
        for (s, &p) in seen.iter_mut().zip(&picked) {
            *s |= p;
        }
        picks.push(picked);
    }
    // Agents not yet picked are forced in; the rest are redrawn with probability q,
    // with at least one of them kept.
    let mut closing: Vec<bool> = seen.iter().map(|s| !s).collect();
    let already: Vec<usize> = (0..n).filter(|&i| seen[i]).collect();
    let mut extra = 0;
    for &i in &already {
        if rng.random::<f64>() < q {
            closing[i] = true;
            extra += 1;
        }
    }
    if extra == 0 && !already.is_empty() {
        closing[already[rng.random_range(0..already.len())]] = true;
    }
    picks.push(closing);
    picks
}
