//! Prior-guided UCB tree search over construction states.
//!
//! Each simulation walks down from the root picking the action that maximizes
//! `Q(s,a) + c·π(s,a)·√M(s) / (1 + M(s,a))`, expands the first unseen state
//! with the evaluator's priors and value, and backs that value (or the exact
//! terminal reward) up the path as an incremental mean.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Action, MdpError, StateKey, TopologyMdp, TopologyState};
use crate::nn::{NetError, PolicyValueNet};

#[derive(Debug, Error)]
pub enum MctsError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("non-finite {what} entered the search tree")]
    NonFinite { what: &'static str },
    #[error("cannot search from a terminal state")]
    TerminalRoot,
    #[error("evaluator returned {got} priors for {expected} actions")]
    PriorShape { expected: usize, got: usize },
}

/// Supplies priors over all `N²` actions and a value estimate for a state.
pub trait Evaluator: Sync {
    fn evaluate(&self, mdp: &TopologyMdp, state: &TopologyState) -> Result<(Vec<f64>, f64), MctsError>;
}

impl Evaluator for PolicyValueNet {
    fn evaluate(&self, mdp: &TopologyMdp, state: &TopologyState) -> Result<(Vec<f64>, f64), MctsError> {
        Ok(self.forward(&mdp.encode_state(state), &state.valid_mask())?)
    }
}

/// Equal priors everywhere and a constant value.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformEvaluator {
    pub value: f64,
}

impl Evaluator for UniformEvaluator {
    fn evaluate(&self, mdp: &TopologyMdp, _state: &TopologyState) -> Result<(Vec<f64>, f64), MctsError> {
        Ok((vec![1.0; mdp.action_count()], self.value))
    }
}

/// Wraps a closure as an evaluator.
pub struct FnEvaluator<F>(pub F);

impl<F> Evaluator for FnEvaluator<F>
where
    F: Fn(&TopologyState) -> (Vec<f64>, f64) + Sync,
{
    fn evaluate(&self, _mdp: &TopologyMdp, state: &TopologyState) -> Result<(Vec<f64>, f64), MctsError> {
        Ok((self.0)(state))
    }
}

/// Statistics of one expanded state, indexed by position in `actions`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeStats {
    /// `M(s)`: one for the expansion plus one per simulation through the node.
    pub visits: u64,
    /// Valid flat action indices, ascending.
    pub actions: Vec<usize>,
    pub priors: Vec<f64>,
    pub q: Vec<f64>,
    /// `M(s,a)`.
    pub counts: Vec<u64>,
}

impl NodeStats {
    fn new(state: &TopologyState, raw: &[f64]) -> Result<Self, MctsError> {
        let actions = state.valid_action_indices();
        let mut priors: Vec<f64> = actions.iter().map(|&a| raw[a].max(0.0)).collect();
        if priors.iter().any(|p| !p.is_finite()) {
            return Err(MctsError::NonFinite { what: "prior" });
        }
        let sum: f64 = priors.iter().sum();
        if sum > 0.0 {
            priors.iter_mut().for_each(|p| *p /= sum);
        } else {
            let u = 1.0 / priors.len() as f64;
            priors.iter_mut().for_each(|p| *p = u);
        }
        let k = actions.len();
        Ok(Self { visits: 1, actions, priors, q: vec![0.0; k], counts: vec![0; k] })
    }

    fn upper_bound(&self, i: usize, c_puct: f64) -> f64 {
        self.q[i] + c_puct * self.priors[i] * (self.visits as f64).sqrt() / (1.0 + self.counts[i] as f64)
    }
}

/// Optional exploration noise mixed into the root priors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletNoise {
    pub alpha: f64,
    pub fraction: f64,
}

/// Search statistics keyed by exact state identity.
#[derive(Clone, Debug)]
pub struct SearchTree {
    nodes: HashMap<StateKey, NodeStats>,
    rng: ChaCha8Rng,
    c_puct: f64,
    noise: Option<DirichletNoise>,
}

impl SearchTree {
    /// `c_puct` must be positive; `seed` drives tie-breaking (and noise).
    pub fn new(c_puct: f64, seed: u64) -> Self {
        assert!(c_puct > 0.0 && c_puct.is_finite(), "c_puct must be positive");
        Self { nodes: HashMap::new(), rng: ChaCha8Rng::seed_from_u64(seed), c_puct, noise: None }
    }

    pub fn with_root_noise(mut self, noise: Option<DirichletNoise>) -> Self {
        self.noise = noise;
        self
    }

    pub fn c_puct(&self) -> f64 {
        self.c_puct
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, state: &TopologyState) -> Option<&NodeStats> {
        self.nodes.get(&state.key())
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&StateKey, &NodeStats)> {
        self.nodes.iter()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Drops every node that can no longer be reached from `root`, keeping
    /// the statistics of its descendants.
    pub fn retain_subtree(&mut self, root: &TopologyState) {
        let fixed: Vec<(usize, u32)> = root
            .key()
            .parents()
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != u32::MAX)
            .map(|(i, &p)| (i, p))
            .collect();
        self.nodes.retain(|k, _| fixed.iter().all(|&(i, p)| k.parents()[i] == p));
    }

    /// One simulation from `state`; returns the value backed up through it.
    pub fn search(&mut self, mdp: &TopologyMdp, state: &TopologyState, eval: &dyn Evaluator) -> Result<f64, MctsError> {
        if state.is_terminal() {
            let r = mdp.terminal_reward(state)?;
            return if r.is_finite() { Ok(r) } else { Err(MctsError::NonFinite { what: "reward" }) };
        }
        let key = state.key();
        let Some(node) = self.nodes.get(&key) else {
            let (priors, value) = eval.evaluate(mdp, state)?;
            if priors.len() != mdp.action_count() {
                return Err(MctsError::PriorShape { expected: mdp.action_count(), got: priors.len() });
            }
            if !value.is_finite() {
                return Err(MctsError::NonFinite { what: "value" });
            }
            self.nodes.insert(key, NodeStats::new(state, &priors)?);
            return Ok(value);
        };
        let i = select(node, self.c_puct, &mut self.rng);
        let action = Action::from_index(node.actions[i], mdp.node_count());
        let next = state.apply(action)?;
        let v = self.search(mdp, &next, eval)?;
        let node = self.nodes.get_mut(&key).expect("node survives its own subtree");
        let n = node.counts[i] as f64;
        node.q[i] = (n * node.q[i] + v) / (n + 1.0);
        node.counts[i] += 1;
        node.visits += 1;
        Ok(v)
    }

    fn add_root_noise(&mut self, key: &StateKey) {
        let Some(noise) = self.noise else { return };
        let Some(node) = self.nodes.get(key) else { return };
        let gamma = Gamma::new(noise.alpha, 1.0).expect("positive alpha");
        let draws: Vec<f64> = (0..node.priors.len()).map(|_| gamma.sample(&mut self.rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            let node = self.nodes.get_mut(key).expect("checked above");
            for (p, d) in node.priors.iter_mut().zip(draws) {
                *p = (1.0 - noise.fraction) * *p + noise.fraction * d / total;
            }
        }
    }

    /// Runs `n_sims` simulations from `state` and returns the root visit
    /// distribution over all `N²` actions. When the root has no child visits
    /// (a single expansion-only pass) the distribution is uniform over valid actions.
    pub fn run_simulations(
        &mut self,
        mdp: &TopologyMdp,
        state: &TopologyState,
        eval: &dyn Evaluator,
        n_sims: usize,
    ) -> Result<Vec<f64>, MctsError> {
        if state.is_terminal() {
            return Err(MctsError::TerminalRoot);
        }
        let key = state.key();
        let mut remaining = n_sims;
        if !self.nodes.contains_key(&key) && remaining > 0 {
            self.search(mdp, state, eval)?;
            remaining -= 1;
        }
        self.add_root_noise(&key);
        for _ in 0..remaining {
            self.search(mdp, state, eval)?;
        }
        let mut dist = vec![0.0; mdp.action_count()];
        let Some(root) = self.nodes.get(&key) else {
            let valid = state.valid_action_indices();
            valid.iter().for_each(|&a| dist[a] = 1.0 / valid.len() as f64);
            return Ok(dist);
        };
        let total: u64 = root.counts.iter().sum();
        for (j, &a) in root.actions.iter().enumerate() {
            dist[a] = if total == 0 { 1.0 / root.actions.len() as f64 } else { root.counts[j] as f64 / total as f64 };
        }
        Ok(dist)
    }

    /// Per-action table for the root: `child,parent,prior,q,visits,u`.
    pub fn root_table_csv(&self, mdp: &TopologyMdp, state: &TopologyState) -> String {
        let mut out = String::from("child,parent,prior,q,visits,u\n");
        if let Some(node) = self.nodes.get(&state.key()) {
            for i in 0..node.actions.len() {
                let a = Action::from_index(node.actions[i], mdp.node_count());
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    a.child,
                    a.parent,
                    node.priors[i],
                    node.q[i],
                    node.counts[i],
                    node.upper_bound(i, self.c_puct)
                );
            }
        }
        out
    }
}

/// Maximizer of the upper bound, ties broken uniformly at random.
fn select(node: &NodeStats, c_puct: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut ties: Vec<usize> = Vec::new();
    for i in 0..node.actions.len() {
        let u = node.upper_bound(i, c_puct);
        if u > best {
            best = u;
            ties.clear();
            ties.push(i);
        } else if u == best {
            ties.push(i);
        }
    }
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

/// `n_sims` simulations from `state` in `tree`; see [`SearchTree::run_simulations`].
pub fn run_simulations(
    tree: &mut SearchTree,
    mdp: &TopologyMdp,
    state: &TopologyState,
    eval: &dyn Evaluator,
    n_sims: usize,
) -> Result<Vec<f64>, MctsError> {
    tree.run_simulations(mdp, state, eval, n_sims)
}

/// One call of the recursive search.
pub fn mcts_search(tree: &mut SearchTree, mdp: &TopologyMdp, state: &TopologyState, eval: &dyn Evaluator) -> Result<f64, MctsError> {
    tree.search(mdp, state, eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{brute_force_optimal, enumerate_trees};
    use crate::mdp::MdpOptions;
    use crate::model::{lifetime_deterministic, AggregationMode};
    use crate::nn::NetConfig;
    use crate::testutil::{line_spec, random_spec};
    use std::sync::Arc;

    fn mdp_for(spec: crate::model::NetworkSpec) -> TopologyMdp {
        TopologyMdp::new(Arc::new(spec), MdpOptions::default()).unwrap()
    }

    fn check_bookkeeping(tree: &SearchTree) {
        for (key, node) in tree.nodes() {
            assert_eq!(node.visits, 1 + node.counts.iter().sum::<u64>(), "{key:?}");
            assert!((node.priors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (q, &c) in node.q.iter().zip(&node.counts) {
                assert!(q.is_finite());
                if c == 0 {
                    assert_eq!(*q, 0.0);
                }
            }
        }
    }

    #[test]
    fn first_call_expands_the_root() {
        let m = mdp_for(random_spec(5, 1));
        let root = m.initial_state().unwrap();
        let mut tree = SearchTree::new(1.5, 0);
        let v = tree.search(&m, &root, &UniformEvaluator { value: 0.42 }).unwrap();
        assert_eq!(v, 0.42);
        let node = tree.node(&root).unwrap();
        assert_eq!(node.visits, 1);
        assert!(node.counts.iter().all(|&c| c == 0));
        assert_eq!(tree.len(), 1);
    }

    #[test]
    fn forced_move_backs_up_the_exact_reward() {
        let m = mdp_for(line_spec(&[300.0]));
        let root = m.initial_state().unwrap();
        let mut tree = SearchTree::new(1.5, 0);
        let eval = UniformEvaluator { value: 0.1 };
        tree.search(&m, &root, &eval).unwrap();
        let v = tree.search(&m, &root, &eval).unwrap();
        let terminal = root.apply(Action::new(1, 0)).unwrap();
        assert_eq!(v, m.terminal_reward(&terminal).unwrap());
        let node = tree.node(&root).unwrap();
        assert_eq!(node.q, vec![v]);
        assert_eq!(node.counts, vec![1]);
        assert_eq!(node.visits, 2);
    }

    #[test]
    fn first_selection_follows_the_largest_prior() {
        let m = mdp_for(random_spec(4, 2));
        let root = m.initial_state().unwrap();
        let favourite = Action::new(2, 0).index(4);
        let eval = FnEvaluator(move |_: &TopologyState| {
            let mut p: Vec<f64> = (0..16).map(|i| 0.1 + i as f64 * 0.01).collect();
            p[favourite] = 5.0;
            (p, 0.0)
        });
        let mut tree = SearchTree::new(1.5, 7);
        tree.run_simulations(&m, &root, &eval, 2).unwrap();
        let node = tree.node(&root).unwrap();
        let visited: Vec<usize> = node.actions.iter().zip(&node.counts).filter(|(_, &c)| c > 0).map(|(&a, _)| a).collect();
        assert_eq!(visited, vec![favourite]);
    }

    #[test]
    fn one_simulation_is_uniform_and_forced_moves_are_certain() {
        let m = mdp_for(random_spec(4, 3));
        let root = m.initial_state().unwrap();
        let mut tree = SearchTree::new(1.5, 0);
        let dist = tree.run_simulations(&m, &root, &UniformEvaluator::default(), 1).unwrap();
        for (a, &ok) in root.valid_mask().iter().enumerate() {
            assert_eq!(dist[a], if ok { 1.0 / 3.0 } else { 0.0 });
        }
        let two = mdp_for(line_spec(&[500.0]));
        let r2 = two.initial_state().unwrap();
        let d2 = SearchTree::new(1.5, 0).run_simulations(&two, &r2, &UniformEvaluator::default(), 10).unwrap();
        assert_eq!(d2[Action::new(1, 0).index(2)], 1.0);
        assert!(matches!(
            SearchTree::new(1.5, 0).run_simulations(&two, &r2.apply(Action::new(1, 0)).unwrap(), &UniformEvaluator::default(), 3),
            Err(MctsError::TerminalRoot)
        ));
    }

    #[test]
    fn visit_budget_and_bookkeeping() {
        for seed in 0..4 {
            let m = mdp_for(random_spec(5, seed));
            let root = m.initial_state().unwrap();
            let mut tree = SearchTree::new(1.5, seed);
            let dist = tree.run_simulations(&m, &root, &UniformEvaluator::default(), 1000).unwrap();
            assert_eq!(tree.node(&root).unwrap().counts.iter().sum::<u64>(), 999);
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            check_bookkeeping(&tree);
        }
    }

    #[test]
    fn q_stays_within_backed_up_rewards() {
        let m = mdp_for(random_spec(5, 9));
        let root = m.initial_state().unwrap();
        let mut tree = SearchTree::new(1.5, 1);
        // leaf values inside the reward range keep every Q inside it too
        let rewards: Vec<f64> =
            enumerate_trees(m.spec()).unwrap().map(|t| lifetime_deterministic(m.spec(), &t, AggregationMode::Subtree).unwrap().continuous / m.reward_scale()).collect();
        let (lo, hi) = rewards.iter().fold((f64::MAX, f64::MIN), |(a, b), &r| (a.min(r), b.max(r)));
        tree.run_simulations(&m, &root, &UniformEvaluator { value: lo }, 2000).unwrap();
        for (_, node) in tree.nodes() {
            for (q, &c) in node.q.iter().zip(&node.counts) {
                if c > 0 {
                    assert!(*q >= lo - 1e-12 && *q <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_tree() {
        let m = mdp_for(random_spec(5, 4));
        let root = m.initial_state().unwrap();
        let run = |seed| {
            let mut t = SearchTree::new(1.5, seed);
            t.run_simulations(&m, &root, &UniformEvaluator::default(), 300).unwrap();
            let mut v: Vec<(StateKey, NodeStats)> = t.nodes().map(|(k, n)| (k.clone(), n.clone())).collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v
        };
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn state_keys_identify_parent_arrays() {
        let m = mdp_for(random_spec(5, 6));
        let root = m.initial_state().unwrap();
        let mut tree = SearchTree::new(1.5, 0);
        tree.run_simulations(&m, &root, &UniformEvaluator::default(), 500).unwrap();
        let mut seen = HashMap::new();
        for (key, _) in tree.nodes() {
            let parents = key.parents().to_vec();
            assert!(seen.insert(parents.clone(), key.clone()).is_none());
            assert_eq!(seen[&parents], *key);
        }
    }

    #[test]
    fn better_arm_dominates_a_two_action_bandit() {
        // after 1 → 0, sensor 2 may join the gateway (far) or sensor 1 (near)
        let m = mdp_for(line_spec(&[900.0, 1000.0]));
        let root = m.initial_state().unwrap().apply(Action::new(1, 0)).unwrap();
        let near = root.apply(Action::new(2, 1)).unwrap();
        let far = root.apply(Action::new(2, 0)).unwrap();
        let (rn, rf) = (m.terminal_reward(&near).unwrap(), m.terminal_reward(&far).unwrap());
        assert!(rn != rf);
        let better = if rn > rf { Action::new(2, 1) } else { Action::new(2, 0) };
        let dist = SearchTree::new(1.5, 2).run_simulations(&m, &root, &UniformEvaluator::default(), 10_000).unwrap();
        assert!(dist[better.index(3)] > 0.9, "share {}", dist[better.index(3)]);
    }

    #[test]
    fn most_visited_first_move_is_on_an_optimal_tree() {
        for seed in [1, 2, 3] {
            let m = mdp_for(random_spec(4, seed));
            let net = crate::nn::PolicyValueNet::zeros(NetConfig::for_mdp(&m, 0)).unwrap();
            let root = m.initial_state().unwrap();
            let dist = SearchTree::new(1.5, seed).run_simulations(&m, &root, &net, 4096).unwrap();
            let best = (0..dist.len()).max_by(|&a, &b| dist[a].total_cmp(&dist[b])).unwrap();
            let a = Action::from_index(best, 4);
            let oracle = brute_force_optimal(m.spec(), AggregationMode::Subtree).unwrap();
            let reachable = enumerate_trees(m.spec())
                .unwrap()
                .filter(|t| t.parent(a.child) == Some(a.parent))
                .map(|t| lifetime_deterministic(m.spec(), &t, AggregationMode::Subtree).unwrap().rounds)
                .max()
                .unwrap();
            assert_eq!(reachable, oracle.best_lifetime.rounds, "seed {seed}: first move {a:?}");
        }
    }

    #[test]
    fn retained_subtree_keeps_descendants_only() {
        let m = mdp_for(random_spec(5, 5));
        let root = m.initial_state().unwrap();
        let mut tree = SearchTree::new(1.5, 0);
        tree.run_simulations(&m, &root, &UniformEvaluator::default(), 400).unwrap();
        let child = root.apply(Action::new(3, 0)).unwrap();
        let before = tree.node(&child).cloned();
        tree.retain_subtree(&child);
        assert_eq!(tree.node(&child).cloned(), before);
        assert!(tree.node(&root).is_none());
        for (k, _) in tree.nodes() {
            assert_eq!(k.parents()[3], 0);
        }
        check_bookkeeping(&tree);
    }

    #[test]
    fn root_noise_keeps_priors_normalized() {
        let m = mdp_for(random_spec(5, 8));
        let root = m.initial_state().unwrap();
        let mut tree = SearchTree::new(1.5, 4).with_root_noise(Some(DirichletNoise { alpha: 0.3, fraction: 0.25 }));
        tree.run_simulations(&m, &root, &UniformEvaluator::default(), 50).unwrap();
        let p = &tree.node(&root).unwrap().priors;
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().any(|&x| (x - 0.25).abs() > 1e-6));
        let csv = tree.root_table_csv(&m, &root);
        assert_eq!(csv.lines().count(), 1 + 4);
    }
}
