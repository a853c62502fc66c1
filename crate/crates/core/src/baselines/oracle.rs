use std::cmp::Ordering;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use rayon::prelude::*;
use thiserror::Error;

use super::prufer;
use crate::model::{AggregationMode, Lifetime, LifetimeEvaluator, ModelError, NetworkSpec, NodeId, Topology};

/// Largest number of active nodes the exhaustive search accepts (9^7 ≈ 4.8M trees).
pub const ORACLE_MAX_NODES: usize = 9;

const PROGRESS_EVERY: u64 = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error(
        "{0} active nodes would mean {1} trees; exhaustive search is limited to {max} active nodes",
        max = ORACLE_MAX_NODES
    )]
    TooLarge(usize, u128),
    #[error("need at least 2 active nodes including the gateway, found {0}")]
    TooSmall(usize),
    #[error("the gateway is inactive")]
    GatewayInactive,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub best_topology: Topology,
    pub best_lifetime: Lifetime,
    pub tree_count: u64,
    pub evaluated_count: u64,
}

/// Active node ids with the gateway first; local label `k` maps to `labels[k]`.
fn labels(spec: &NetworkSpec) -> Result<Vec<NodeId>, OracleError> {
    if !spec.is_active(NodeId::GATEWAY) {
        return Err(OracleError::GatewayInactive);
    }
    let labels: Vec<NodeId> = spec.active_nodes().collect();
    let k = labels.len();
    if k < 2 {
        return Err(OracleError::TooSmall(k));
    }
    if k > ORACLE_MAX_NODES {
        return Err(OracleError::TooLarge(k, (k as u128).pow(k as u32 - 2)));
    }
    Ok(labels)
}

/// Reusable buffers for turning a sequence into a gateway-rooted topology.
struct Orienter {
    degree: Vec<usize>,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
    queue: Vec<usize>,
    local_parent: Vec<usize>,
}

impl Orienter {
    fn new(k: usize) -> Self {
        Self {
            degree: vec![0; k],
            edges: Vec::with_capacity(k),
            adj: vec![Vec::with_capacity(k); k],
            queue: Vec::with_capacity(k),
            local_parent: vec![usize::MAX; k],
        }
    }

    fn orient(&mut self, seq: &[usize], labels: &[NodeId], out: &mut [Option<NodeId>]) {
        let k = labels.len();
        prufer::decode_into(seq, k, &mut self.degree, &mut self.edges);
        for a in &mut self.adj {
            a.clear();
        }
        for &(a, b) in &self.edges {
            self.adj[a].push(b);
            self.adj[b].push(a);
        }
        self.local_parent.fill(usize::MAX);
        self.local_parent[0] = 0;
        self.queue.clear();
        self.queue.push(0);
        let mut head = 0;
        while head < self.queue.len() {
            let v = self.queue[head];
            head += 1;
            for &w in &self.adj[v] {
                if self.local_parent[w] == usize::MAX {
                    self.local_parent[w] = v;
                    self.queue.push(w);
                }
            }
        }
        for (local, &global) in labels.iter().enumerate().skip(1) {
            out[global.0] = Some(labels[self.local_parent[local]]);
        }
    }
}

/// Every labeled tree on the active nodes, oriented toward the gateway, in
/// Prüfer-sequence order.
pub fn enumerate_trees(spec: &NetworkSpec) -> Result<impl Iterator<Item = Topology> + '_, OracleError> {
    let labels = labels(spec)?;
    let k = labels.len();
    let total = prufer::tree_count(k);
    let mut orienter = Orienter::new(k);
    let mut seq = vec![0; k - 2];
    let mut parent = vec![None; spec.node_count()];
    Ok((0..total).map(move |i| {
        if i > 0 {
            prufer::advance(&mut seq, k);
        }
        orienter.orient(&seq, &labels, &mut parent);
        Topology::from_parents(parent.clone())
    }))
}

type Best = Option<(Lifetime, Topology)>;

fn better(a: Best, b: Best) -> Best {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => {
            let ord = b.0.rounds.cmp(&a.0.rounds).then_with(|| a.1.cmp(&b.1));
            Some(if ord == Ordering::Greater { b } else { a })
        }
    }
}

/// Exhaustive search for the tree with the longest deterministic lifetime.
///
/// Ties in whole rounds go to the lexicographically smallest parent array.
/// Progress is logged every 100k trees.
pub fn brute_force_optimal(spec: &NetworkSpec, mode: AggregationMode) -> Result<OracleResult, OracleError> {
    let labels = labels(spec)?;
    let k = labels.len();
    let total = prufer::tree_count(k);
    let chunks = total.clamp(1, 256);
    let per_chunk = total.div_ceil(chunks);
    let done = AtomicU64::new(0);

    let outcome: Result<(Best, u64), OracleError> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * per_chunk;
            let end = (start + per_chunk).min(total);
            let mut orienter = Orienter::new(k);
            let mut eval = LifetimeEvaluator::new();
            let mut seq = vec![0; k - 2];
            prufer::sequence_at(start, k, &mut seq);
            let mut parent = vec![None; spec.node_count()];
            let mut best: Best = None;
            let mut evaluated = 0;
            for i in start..end {
                if i > start {
                    prufer::advance(&mut seq, k);
                }
                orienter.orient(&seq, &labels, &mut parent);
                let topology = Topology::from_parents(parent.clone());
                let lt = eval.evaluate_unchecked(spec, &topology, mode)?;
                let keep = match &best {
                    None => true,
                    Some((b, bt)) => lt.rounds > b.rounds || (lt.rounds == b.rounds && topology < *bt),
                };
                if keep {
                    best = Some((lt, topology));
                }
                evaluated += 1;
                let n = done.fetch_add(1, AtomicOrdering::Relaxed) + 1;
                if n.is_multiple_of(PROGRESS_EVERY) {
                    log::info!("oracle: {n}/{total} trees evaluated");
                }
            }
            Ok((best, evaluated))
        })
        .try_reduce(|| (None, 0), |a, b| Ok((better(a.0, b.0), a.1 + b.1)));

    let (best, evaluated) = outcome?;
    let (best_lifetime, best_topology) = best.expect("at least one tree");
    Ok(OracleResult { best_topology, best_lifetime, tree_count: total, evaluated_count: evaluated })
}
