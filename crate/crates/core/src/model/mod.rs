//! Physical model of the sensor network: node geometry, batteries, the per-bit
//! energy constants and the tree topology connecting every sensor to the gateway.

mod energy;
mod instance;

pub use energy::{
    compute_loads, compute_round_energy, lifetime_deterministic, lifetime_stochastic,
    AggregationMode, EnergyVector, Lifetime, LifetimeEvaluator, LoadVector,
};
pub use instance::{
    parse_instance, parse_topology_file, spec_digest, write_instance, write_topology_file, ParseError,
};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Networks up to this size keep a dense pairwise distance table.
pub const DISTANCE_CACHE_MAX_NODES: usize = 512;

/// Index of a node. Node 0 is always the gateway.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const GATEWAY: NodeId = NodeId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0
    }

    #[inline]
    pub fn is_gateway(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("a network needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("node {node}: {what}")]
    InvalidNode { node: usize, what: String },
    #[error("invalid energy parameters: {0}")]
    InvalidParams(String),
    #[error("topology has {got} entries but the network has {expected} nodes")]
    TopologyLength { expected: usize, got: usize },
    #[error("gateway must not have a parent")]
    GatewayHasParent,
    #[error("active sensor {0} has no parent")]
    Orphan(NodeId),
    #[error("inactive node {0} must not carry a parent")]
    InactiveWithParent(NodeId),
    #[error("sensor {0} is its own parent")]
    SelfParent(NodeId),
    #[error("sensor {child} points to {parent}, which is out of range or inactive")]
    BadParent { child: NodeId, parent: NodeId },
    #[error("sensor {0} lies on a cycle and cannot reach the gateway")]
    Cycle(NodeId),
    #[error("data vector has {got} entries, expected {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("lifetime is unbounded: no active sensor consumes energy")]
    UnboundedLifetime,
}

/// Radio and traffic constants shared by all nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    /// Power-amplification constant, J/(m²·bit).
    pub rho: f64,
    /// Processing energy per bit, J/bit.
    pub eps_proc: f64,
    /// Inclusive bounds of the bits each sensor generates per round.
    pub data_bits_min: u32,
    pub data_bits_max: u32,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            rho: 1e-12,
            eps_proc: 50e-9,
            data_bits_min: 500,
            data_bits_max: 1000,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(ModelError::InvalidParams(format!("rho must be finite and > 0, got {}", self.rho)));
        }
        if !(self.eps_proc.is_finite() && self.eps_proc >= 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "eps_proc must be finite and >= 0, got {}",
                self.eps_proc
            )));
        }
        if self.data_bits_min == 0 || self.data_bits_min > self.data_bits_max {
            return Err(ModelError::InvalidParams(format!(
                "need 0 < data_bits_min <= data_bits_max, got {}..{}",
                self.data_bits_min, self.data_bits_max
            )));
        }
        Ok(())
    }

    /// Mean of the per-round data distribution.
    pub fn mean_data_bits(&self) -> f64 {
        (f64::from(self.data_bits_min) + f64::from(self.data_bits_max)) / 2.0
    }
}

/// One node of a [`NetworkSpec`] as supplied by a caller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeSpec {
    pub position: [f64; 2],
    /// Battery in joules. Ignored for the gateway, whose supply is unbounded.
    pub energy: f64,
    pub active: bool,
}

impl NodeSpec {
    pub fn sensor(x: f64, y: f64, energy: f64) -> Self {
        Self { position: [x, y], energy, active: true }
    }

    pub fn gateway(x: f64, y: f64) -> Self {
        Self { position: [x, y], energy: f64::INFINITY, active: true }
    }
}

/// Immutable physical description of a network.
///
/// The node count is the padded capacity; nodes may be inactive (removed, or
/// spare slots reserved for later additions).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    positions: Vec<[f64; 2]>,
    energy: Vec<f64>,
    active: Vec<bool>,
    params: EnergyParams,
    distances: Option<Vec<f64>>,
}

impl NetworkSpec {
    pub fn new(nodes: Vec<NodeSpec>, params: EnergyParams) -> Result<Self, ModelError> {
        if nodes.len() < 2 {
            return Err(ModelError::TooFewNodes(nodes.len()));
        }
        params.validate()?;
        for (i, n) in nodes.iter().enumerate() {
            if !(n.position[0].is_finite() && n.position[1].is_finite()) {
                return Err(ModelError::InvalidNode { node: i, what: "position is not finite".into() });
            }
            if i > 0 && !(n.energy.is_finite() && n.energy > 0.0) {
                return Err(ModelError::InvalidNode {
                    node: i,
                    what: format!("battery energy must be finite and > 0, got {}", n.energy),
                });
            }
        }
        let mut energy: Vec<f64> = nodes.iter().map(|n| n.energy).collect();
        energy[0] = f64::INFINITY;
        let mut spec = Self {
            positions: nodes.iter().map(|n| n.position).collect(),
            energy,
            active: nodes.iter().map(|n| n.active).collect(),
            params,
            distances: None,
        };
        spec.rebuild_distance_cache();
        Ok(spec)
    }

    fn rebuild_distance_cache(&mut self) {
        let n = self.positions.len();
        self.distances = (n <= DISTANCE_CACHE_MAX_NODES).then(|| {
            let mut d = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    d[i * n + j] = self.raw_distance(i, j);
                }
            }
            d
        });
    }

    #[inline]
    fn raw_distance(&self, i: usize, j: usize) -> f64 {
        let [xi, yi] = self.positions[i];
        let [xj, yj] = self.positions[j];
        ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt()
    }

    /// Number of node slots, including inactive ones.
    #[inline]
    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn params(&self) -> &EnergyParams {
        &self.params
    }

    pub fn position(&self, node: NodeId) -> [f64; 2] {
        self.positions[node.0]
    }

    /// Battery energy in joules; `f64::INFINITY` for the gateway.
    pub fn initial_energy(&self, node: NodeId) -> f64 {
        self.energy[node.0]
    }

    pub fn eps_proc(&self, _node: NodeId) -> f64 {
        self.params.eps_proc
    }

    pub fn is_active(&self, node: NodeId) -> bool {
        self.active[node.0]
    }

    /// Active sensors (the gateway excluded) in index order.
    pub fn active_sensors(&self) -> impl Iterator<Item = NodeId> + '_ {
        (1..self.node_count()).filter(|&i| self.active[i]).map(NodeId)
    }

    pub fn active_sensor_count(&self) -> usize {
        self.active[1..].iter().filter(|&&a| a).count()
    }

    /// Active nodes including the gateway, when it is active.
    pub fn active_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count()).filter(|&i| self.active[i]).map(NodeId)
    }

    #[inline]
    pub fn distance(&self, i: NodeId, j: NodeId) -> f64 {
        match &self.distances {
            Some(d) => d[i.0 * self.node_count() + j.0],
            None => self.raw_distance(i.0, j.0),
        }
    }

    /// Returns a copy with the given nodes' active flags set to `active`.
    pub fn with_active(&self, nodes: &[NodeId], active: bool) -> Result<Self, ModelError> {
        let mut out = self.clone();
        for &n in nodes {
            if n.0 >= out.node_count() {
                return Err(ModelError::InvalidNode { node: n.0, what: "index out of range".into() });
            }
            out.active[n.0] = active;
        }
        Ok(out)
    }

    /// Returns a copy where slot `node` is replaced by a new active sensor.
    pub fn with_sensor(&self, node: NodeId, position: [f64; 2], energy: f64) -> Result<Self, ModelError> {
        if node.is_gateway() || node.0 >= self.node_count() {
            return Err(ModelError::InvalidNode { node: node.0, what: "not a sensor slot".into() });
        }
        if !(position[0].is_finite() && position[1].is_finite()) {
            return Err(ModelError::InvalidNode { node: node.0, what: "position is not finite".into() });
        }
        if !(energy.is_finite() && energy > 0.0) {
            return Err(ModelError::InvalidNode { node: node.0, what: format!("battery energy {energy} is not > 0") });
        }
        let mut out = self.clone();
        out.positions[node.0] = position;
        out.energy[node.0] = energy;
        out.active[node.0] = true;
        out.rebuild_distance_cache();
        Ok(out)
    }

    pub fn with_params(&self, params: EnergyParams) -> Result<Self, ModelError> {
        params.validate()?;
        let mut out = self.clone();
        out.params = params;
        Ok(out)
    }
}

/// Parent assignment of a complete or partial tree; `parent[0]` is always `None`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Topology {
    parent: Vec<Option<NodeId>>,
}

impl Topology {
    pub fn from_parents(parent: Vec<Option<NodeId>>) -> Self {
        Self { parent }
    }

    /// Convenience constructor from raw indices; `None` marks the gateway or an inactive node.
    pub fn from_indices(parent: &[Option<usize>]) -> Self {
        Self { parent: parent.iter().map(|p| p.map(NodeId)).collect() }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    #[inline]
    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.parent[node.0]
    }

    pub fn parents(&self) -> &[Option<NodeId>] {
        &self.parent
    }

    /// Directed edges `(child, parent)`.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.parent.iter().enumerate().filter_map(|(c, p)| p.map(|p| (NodeId(c), p)))
    }

    /// Checks that the parent pointers form an arborescence toward the gateway
    /// over exactly the active nodes.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<(), ModelError> {
        let n = spec.node_count();
        if self.parent.len() != n {
            return Err(ModelError::TopologyLength { expected: n, got: self.parent.len() });
        }
        if self.parent[0].is_some() {
            return Err(ModelError::GatewayHasParent);
        }
        for i in 1..n {
            let id = NodeId(i);
            match (spec.is_active(id), self.parent[i]) {
                (true, None) => return Err(ModelError::Orphan(id)),
                (false, Some(_)) => return Err(ModelError::InactiveWithParent(id)),
                (false, None) => {}
                (true, Some(p)) => {
                    if p == id {
                        return Err(ModelError::SelfParent(id));
                    }
                    if p.0 >= n || !spec.is_active(p) {
                        return Err(ModelError::BadParent { child: id, parent: p });
                    }
                }
            }
        }
        // 0 = unknown, 1 = on the current walk, 2 = reaches the gateway
        let mut mark = vec![0u8; n];
        mark[0] = 2;
        let mut walk = Vec::new();
        for start in 1..n {
            if !spec.active[start] || mark[start] == 2 {
                continue;
            }
            walk.clear();
            let mut cur = start;
            while mark[cur] == 0 {
                mark[cur] = 1;
                walk.push(cur);
                cur = self.parent[cur].expect("checked above").0;
            }
            if mark[cur] == 1 {
                return Err(ModelError::Cycle(NodeId(cur)));
            }
            for &w in &walk {
                mark[w] = 2;
            }
        }
        Ok(())
    }

    /// Depth of every node (gateway 0); `None` for nodes not on the tree.
    pub fn depths(&self) -> Vec<Option<usize>> {
        let n = self.parent.len();
        let mut depth: Vec<Option<usize>> = vec![None; n];
        depth[0] = Some(0);
        for start in 1..n {
            let mut path = Vec::new();
            let mut cur = start;
            let base = loop {
                if let Some(d) = depth[cur] {
                    break Some(d);
                }
                if path.len() > n {
                    break None;
                }
                path.push(cur);
                match self.parent[cur] {
                    Some(p) => cur = p.0,
                    None => break None,
                }
            };
            if let Some(b) = base {
                for (k, &node) in path.iter().rev().enumerate() {
                    depth[node] = Some(b + k + 1);
                }
            }
        }
        depth
    }

    /// Sum of Euclidean edge lengths.
    pub fn total_length(&self, spec: &NetworkSpec) -> f64 {
        self.edges().map(|(c, p)| spec.distance(c, p)).sum()
    }
}
