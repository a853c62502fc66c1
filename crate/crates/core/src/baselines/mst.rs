use std::cmp::Ordering;

use crate::model::{NetworkSpec, NodeId, Topology};

/// Edge ordering key: weight, then smaller endpoint, then larger endpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
struct EdgeKey {
    weight: f64,
    lo: usize,
    hi: usize,
}

impl EdgeKey {
    fn new(spec: &NetworkSpec, a: usize, b: usize) -> Self {
        Self { weight: spec.distance(NodeId(a), NodeId(b)), lo: a.min(b), hi: a.max(b) }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        self.weight
            .total_cmp(&other.weight)
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

/// Euclidean minimum spanning tree over the active nodes (Prim's method grown
/// from the gateway), with every edge oriented toward the gateway.
pub fn mst_topology(spec: &NetworkSpec) -> Topology {
    let n = spec.node_count();
    let mut parent = vec![None; n];
    let mut in_tree = vec![false; n];
    let mut best: Vec<Option<(EdgeKey, usize)>> = vec![None; n];
    let mut pending: Vec<usize> = spec.active_sensors().map(NodeId::index).collect();
    in_tree[0] = true;
    for &v in &pending {
        best[v] = Some((EdgeKey::new(spec, 0, v), 0));
    }
    while !pending.is_empty() {
        let (pos, _) = pending
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| best[a].unwrap().0.cmp(&best[b].unwrap().0))
            .expect("non-empty");
        let v = pending.swap_remove(pos);
        in_tree[v] = true;
        parent[v] = Some(NodeId(best[v].unwrap().1));
        for &w in &pending {
            let cand = EdgeKey::new(spec, v, w);
            if cand.cmp(&best[w].unwrap().0) == Ordering::Less {
                best[w] = Some((cand, v));
            }
        }
    }
    Topology::from_parents(parent)
}

/// Undirected MST edges by Kruskal's method with the same tie-breaking as
/// [`mst_topology`]. Used as an independent cross-check.
pub fn kruskal_mst_edges(spec: &NetworkSpec) -> Vec<(NodeId, NodeId)> {
    let nodes: Vec<usize> = spec.active_nodes().map(NodeId::index).collect();
    let mut edges = Vec::with_capacity(nodes.len() * nodes.len() / 2);
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            edges.push(EdgeKey::new(spec, a, b));
        }
    }
    edges.sort_by(EdgeKey::cmp);
    let mut uf = UnionFind::new(spec.node_count());
    let mut out = Vec::with_capacity(nodes.len().saturating_sub(1));
    for e in edges {
        if uf.union(e.lo, e.hi) {
            out.push((NodeId(e.lo), NodeId(e.hi)));
            if out.len() + 1 == nodes.len() {
                break;
            }
        }
    }
    out
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            Ordering::Less => self.parent[ra] = rb,
            Ordering::Greater => self.parent[rb] = ra,
            Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}
