//! Reference topologies: star, random, minimum spanning tree, and the exact
//! optimum by exhaustive enumeration of labeled trees.

mod mst;
mod oracle;
pub mod prufer;

pub use mst::{kruskal_mst_edges, mst_topology};
pub use oracle::{brute_force_optimal, enumerate_trees, OracleError, OracleResult, ORACLE_MAX_NODES};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{MdpError, MdpOptions, TopologyMdp};
use crate::model::{NetworkSpec, NodeId, Topology};

/// Every active sensor transmits straight to the gateway.
pub fn star_topology(spec: &NetworkSpec) -> Topology {
    let mut parent = vec![None; spec.node_count()];
    for s in spec.active_sensors() {
        parent[s.0] = Some(NodeId::GATEWAY);
    }
    Topology::from_parents(parent)
}

/// Builds a tree by taking uniformly random valid construction actions until
/// every active sensor is attached.
pub fn random_topology(spec: &NetworkSpec, seed: u64) -> Result<Topology, MdpError> {
    let mdp = TopologyMdp::with_reward_scale(Arc::new(spec.clone()), MdpOptions::default(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = mdp.initial_state()?;
    while !state.is_terminal() {
        let actions = state.valid_actions();
        state = state.apply(actions[rng.random_range(0..actions.len())])?;
    }
    Ok(state.topology())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{lifetime_deterministic, AggregationMode};
    use crate::testutil::{line_spec, random_spec};
    use std::collections::HashSet;

    #[test]
    fn star_is_depth_one() {
        let spec = random_spec(5, 1);
        let star = star_topology(&spec);
        star.validate(&spec).unwrap();
        assert_eq!(star.edges().count(), 4);
        assert!(star.edges().all(|(_, p)| p == NodeId::GATEWAY));
        assert!(star.depths().iter().flatten().all(|&d| d <= 1));
    }

    #[test]
    fn two_node_constructors_agree() {
        let spec = line_spec(&[250.0]);
        let star = star_topology(&spec);
        assert_eq!(mst_topology(&spec), star);
        assert_eq!(random_topology(&spec, 99).unwrap(), star);
        let oracle = brute_force_optimal(&spec, AggregationMode::Subtree).unwrap();
        assert_eq!(oracle.best_topology, star);
        assert_eq!(oracle.tree_count, 1);
    }

    #[test]
    fn random_is_reproducible_and_valid() {
        let spec = random_spec(12, 4);
        for seed in 0..20 {
            let a = random_topology(&spec, seed).unwrap();
            assert_eq!(a, random_topology(&spec, seed).unwrap());
            a.validate(&spec).unwrap();
        }
    }

    #[test]
    fn random_covers_all_sixteen_trees_on_four_nodes() {
        let spec = random_spec(4, 8);
        let all: HashSet<Topology> = enumerate_trees(&spec).unwrap().collect();
        assert_eq!(all.len(), 16);
        let seen: HashSet<Topology> = (0..10_000).map(|s| random_topology(&spec, s).unwrap()).collect();
        assert_eq!(seen, all);
    }

    #[test]
    fn random_skips_inactive_nodes() {
        let spec = random_spec(8, 2).with_active(&[NodeId(3), NodeId(5)], false).unwrap();
        for seed in 0..50 {
            let t = random_topology(&spec, seed).unwrap();
            t.validate(&spec).unwrap();
            assert!(t.edges().all(|(c, p)| ![3, 5].contains(&c.0) && ![3, 5].contains(&p.0)));
        }
    }

    #[test]
    fn oracle_dominates_heuristics_on_small_instances() {
        for seed in 0..6 {
            let spec = random_spec(5 + (seed as usize % 3), seed);
            let oracle = brute_force_optimal(&spec, AggregationMode::Subtree).unwrap();
            let lt = |t: &Topology| lifetime_deterministic(&spec, t, AggregationMode::Subtree).unwrap().rounds;
            assert!(oracle.best_lifetime.rounds >= lt(&star_topology(&spec)));
            assert!(oracle.best_lifetime.rounds >= lt(&mst_topology(&spec)));
            for s in 0..20 {
                assert!(oracle.best_lifetime.rounds >= lt(&random_topology(&spec, s).unwrap()));
            }
        }
    }
}
