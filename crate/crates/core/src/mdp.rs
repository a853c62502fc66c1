//! Tree construction as a finite-horizon decision process.
//!
//! A state is a partial arborescence rooted at the gateway. Each action attaches
//! one unconnected active sensor to a node already on the tree, so a complete
//! tree is reached after exactly one action per active sensor. The only reward
//! arrives at the terminal state: the tree's continuous lifetime divided by the
//! MST tree's lifetime on the same network.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines;
use crate::model::{AggregationMode, Lifetime, LifetimeEvaluator, ModelError, NetworkSpec, NodeId, Topology};

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("the gateway is inactive")]
    GatewayInactive,
    #[error("action {0:?} refers to a node outside the network")]
    OutOfRange(Action),
    #[error("sensor {0} is already connected")]
    ChildConnected(NodeId),
    #[error("the gateway cannot be attached to another node")]
    GatewayAsChild,
    #[error("node {0} is not on the tree yet")]
    ParentNotConnected(NodeId),
    #[error("node {0} is inactive")]
    Inactive(NodeId),
    #[error("a node cannot be its own parent ({0})")]
    SelfLoop(NodeId),
    #[error("state is not terminal ({remaining} sensors unconnected)")]
    NotTerminal { remaining: usize },
    #[error("state belongs to a different network")]
    ForeignState,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Attach `child` (not yet on the tree) below `parent` (already on the tree).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub child: NodeId,
    pub parent: NodeId,
}

impl Action {
    pub fn new(child: usize, parent: usize) -> Self {
        Self { child: NodeId(child), parent: NodeId(parent) }
    }

    /// Flat policy-head index `child·N + parent`.
    #[inline]
    pub fn index(self, node_count: usize) -> usize {
        self.child.0 * node_count + self.parent.0
    }

    #[inline]
    pub fn from_index(index: usize, node_count: usize) -> Self {
        Self::new(index / node_count, index % node_count)
    }
}

/// Exact identity of a state: the packed parent array.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(Box<[u32]>);

impl StateKey {
    /// Parent index per node, `u32::MAX` for none.
    pub fn from_parents(parents: Vec<u32>) -> Self {
        Self(parents.into_boxed_slice())
    }

    pub fn parents(&self) -> &[u32] {
        &self.0
    }
}

#[derive(Clone, Debug)]
pub struct TopologyState {
    spec: Arc<NetworkSpec>,
    parent: Vec<Option<NodeId>>,
    connected: Vec<bool>,
    step: usize,
    remaining: usize,
}

impl PartialEq for TopologyState {
    fn eq(&self, other: &Self) -> bool {
        self.parent == other.parent && *self.spec == *other.spec
    }
}

impl TopologyState {
    pub fn spec(&self) -> &Arc<NetworkSpec> {
        &self.spec
    }

    /// Number of actions taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_terminal(&self) -> bool {
        self.remaining == 0
    }

    /// Active sensors not yet on the tree.
    pub fn remaining(&self) -> usize {
        self.remaining
    }

    pub fn is_connected(&self, node: NodeId) -> bool {
        self.connected[node.0]
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.parent[node.0]
    }

    pub fn connected_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.connected.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| NodeId(i))
    }

    pub fn unconnected_sensors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.spec.active_sensors().filter(|s| !self.connected[s.0])
    }

    /// Current parent assignment as a (possibly partial) topology.
    pub fn topology(&self) -> Topology {
        Topology::from_parents(self.parent.clone())
    }

    pub fn key(&self) -> StateKey {
        StateKey(self.parent.iter().map(|p| p.map_or(u32::MAX, |p| p.0 as u32)).collect())
    }

    /// All `(child, parent)` pairs with an unconnected active child and a connected parent.
    pub fn valid_actions(&self) -> Vec<Action> {
        let connected: Vec<NodeId> = self.connected_nodes().collect();
        self.unconnected_sensors()
            .flat_map(|c| connected.iter().map(move |&p| Action { child: c, parent: p }))
            .collect()
    }

    /// Flat indices of [`valid_actions`](Self::valid_actions), ascending.
    pub fn valid_action_indices(&self) -> Vec<usize> {
        let n = self.spec.node_count();
        let mut v: Vec<usize> = self.valid_actions().into_iter().map(|a| a.index(n)).collect();
        v.sort_unstable();
        v
    }

    /// Boolean mask over all `N²` flat action indices.
    pub fn valid_mask(&self) -> Vec<bool> {
        let n = self.spec.node_count();
        let mut mask = vec![false; n * n];
        for a in self.valid_actions() {
            mask[a.index(n)] = true;
        }
        mask
    }

    fn check(&self, a: Action) -> Result<(), MdpError> {
        let n = self.spec.node_count();
        if a.child.0 >= n || a.parent.0 >= n {
            return Err(MdpError::OutOfRange(a));
        }
        if a.child.is_gateway() {
            return Err(MdpError::GatewayAsChild);
        }
        if a.child == a.parent {
            return Err(MdpError::SelfLoop(a.child));
        }
        for node in [a.child, a.parent] {
            if !self.spec.is_active(node) {
                return Err(MdpError::Inactive(node));
            }
        }
        if self.connected[a.child.0] {
            return Err(MdpError::ChildConnected(a.child));
        }
        if !self.connected[a.parent.0] {
            return Err(MdpError::ParentNotConnected(a.parent));
        }
        Ok(())
    }

    /// Successor state; `self` is left untouched.
    pub fn apply(&self, a: Action) -> Result<TopologyState, MdpError> {
        self.check(a)?;
        let mut next = self.clone();
        next.parent[a.child.0] = Some(a.parent);
        next.connected[a.child.0] = true;
        next.step += 1;
        next.remaining -= 1;
        Ok(next)
    }
}

/// State encoding fed to the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// Adjacency, connectivity, normalized distances and normalized batteries.
    #[default]
    Full,
    /// Adjacency matrix only.
    Bare,
}

impl Encoding {
    pub fn channels(self) -> usize {
        match self {
            Encoding::Full => 4,
            Encoding::Bare => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdpOptions {
    pub aggregation: AggregationMode,
    pub encoding: Encoding,
}

/// The decision process bound to one network: transitions, rewards and encoding.
#[derive(Clone, Debug)]
pub struct TopologyMdp {
    spec: Arc<NetworkSpec>,
    options: MdpOptions,
    reward_scale: f64,
    /// Channels 2 and 3, which only depend on the network.
    static_planes: Vec<f64>,
}

impl TopologyMdp {
    /// Builds the process, normalizing rewards by the MST tree's continuous lifetime.
    pub fn new(spec: Arc<NetworkSpec>, options: MdpOptions) -> Result<Self, MdpError> {
        if !spec.is_active(NodeId::GATEWAY) {
            return Err(MdpError::GatewayInactive);
        }
        let mst = baselines::mst_topology(&spec);
        let scale = LifetimeEvaluator::new().evaluate(&spec, &mst, options.aggregation)?.continuous;
        Ok(Self::with_reward_scale(spec, options, scale))
    }

    pub fn with_reward_scale(spec: Arc<NetworkSpec>, options: MdpOptions, reward_scale: f64) -> Self {
        let static_planes = static_planes(&spec);
        Self { spec, options, reward_scale, static_planes }
    }

    pub fn spec(&self) -> &Arc<NetworkSpec> {
        &self.spec
    }

    pub fn options(&self) -> MdpOptions {
        self.options
    }

    pub fn node_count(&self) -> usize {
        self.spec.node_count()
    }

    pub fn action_count(&self) -> usize {
        self.node_count() * self.node_count()
    }

    /// Continuous lifetime that maps to reward 1.0.
    pub fn reward_scale(&self) -> f64 {
        self.reward_scale
    }

    /// Number of actions from the initial state to a terminal state.
    pub fn horizon(&self) -> usize {
        self.spec.active_sensor_count()
    }

    pub fn initial_state(&self) -> Result<TopologyState, MdpError> {
        if !self.spec.is_active(NodeId::GATEWAY) {
            return Err(MdpError::GatewayInactive);
        }
        let n = self.spec.node_count();
        let mut connected = vec![false; n];
        connected[0] = true;
        Ok(TopologyState {
            spec: Arc::clone(&self.spec),
            parent: vec![None; n],
            connected,
            step: 0,
            remaining: self.spec.active_sensor_count(),
        })
    }

    fn owns(&self, state: &TopologyState) -> Result<(), MdpError> {
        if Arc::ptr_eq(&self.spec, &state.spec) || *self.spec == *state.spec {
            Ok(())
        } else {
            Err(MdpError::ForeignState)
        }
    }

    /// Deterministic lifetime of a terminal state's tree.
    pub fn lifetime(&self, state: &TopologyState) -> Result<Lifetime, MdpError> {
        self.owns(state)?;
        if !state.is_terminal() {
            return Err(MdpError::NotTerminal { remaining: state.remaining });
        }
        Ok(LifetimeEvaluator::new().evaluate_unchecked(&self.spec, &state.topology(), self.options.aggregation)?)
    }

    pub fn terminal_reward(&self, state: &TopologyState) -> Result<f64, MdpError> {
        Ok(self.lifetime(state)?.continuous / self.reward_scale)
    }

    pub fn channels(&self) -> usize {
        self.options.encoding.channels()
    }

    /// Length of an encoded state, `C·N·N`.
    pub fn encoded_len(&self) -> usize {
        self.channels() * self.action_count()
    }

    /// Writes the `(C, N, N)` encoding into `out`.
    pub fn encode_into(&self, state: &TopologyState, out: &mut [f64]) {
        let n = self.node_count();
        let plane = n * n;
        assert_eq!(out.len(), self.encoded_len());
        out[..plane].fill(0.0);
        for (c, p) in state.parent.iter().enumerate() {
            if let Some(p) = p {
                out[c * n + p.0] = 1.0;
            }
        }
        if self.options.encoding == Encoding::Full {
            let conn = &mut out[plane..2 * plane];
            conn.fill(0.0);
            for (i, &c) in state.connected.iter().enumerate() {
                if c {
                    conn[i * n + i] = 1.0;
                }
            }
            out[2 * plane..].copy_from_slice(&self.static_planes);
        }
    }

    /// Rebuilds the state identified by `key`, replaying its attachments from
    /// the gateway outward so every step is checked.
    pub fn state_from_key(&self, key: &StateKey) -> Result<TopologyState, MdpError> {
        let n = self.node_count();
        if key.0.len() != n {
            return Err(MdpError::ForeignState);
        }
        let mut state = self.initial_state()?;
        let mut pending: Vec<usize> = (0..n).filter(|&i| key.0[i] != u32::MAX).collect();
        while !pending.is_empty() {
            let before = pending.len();
            let mut i = 0;
            while i < pending.len() {
                let c = pending[i];
                let p = key.0[c] as usize;
                if p < n && state.connected[p] {
                    state = state.apply(Action::new(c, p))?;
                    pending.swap_remove(i);
                } else {
                    i += 1;
                }
            }
            if pending.len() == before {
                let c = pending[0];
                return Err(MdpError::ParentNotConnected(NodeId(key.0[c] as usize)));
            }
        }
        Ok(state)
    }

    pub fn encode_state(&self, state: &TopologyState) -> Vec<f64> {
        let mut out = vec![0.0; self.encoded_len()];
        self.encode_into(state, &mut out);
        out
    }
}

fn static_planes(spec: &NetworkSpec) -> Vec<f64> {
    let n = spec.node_count();
    let mut out = vec![0.0; 2 * n * n];
    let active: Vec<NodeId> = spec.active_nodes().collect();
    let max_d = active
        .iter()
        .flat_map(|&i| active.iter().map(move |&j| (i, j)))
        .map(|(i, j)| spec.distance(i, j))
        .fold(0.0, f64::max);
    let max_e = spec.active_sensors().map(|s| spec.initial_energy(s)).fold(0.0, f64::max);
    let (dist, energy) = out.split_at_mut(n * n);
    for &i in &active {
        let e = if i.is_gateway() || max_e <= 0.0 { 1.0 } else { spec.initial_energy(i) / max_e };
        for &j in &active {
            if max_d > 0.0 {
                dist[i.0 * n + j.0] = spec.distance(i, j) / max_d;
            }
            energy[i.0 * n + j.0] = e;
        }
    }
    out
}
