//! Small fixtures shared by unit tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{EnergyParams, NetworkSpec, NodeId, NodeSpec, Topology};

/// Gateway at the origin and sensors along the x axis with 1 J batteries.
pub fn line_spec(xs: &[f64]) -> NetworkSpec {
    let mut nodes = vec![NodeSpec::gateway(0.0, 0.0)];
    nodes.extend(xs.iter().map(|&x| NodeSpec::sensor(x, 0.0, 1.0)));
    NetworkSpec::new(nodes, EnergyParams::default()).unwrap()
}

/// Sensors uniform in a 2 km square around a central gateway, with random batteries.
pub fn random_spec(n: usize, seed: u64) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![NodeSpec::gateway(0.0, 0.0)];
    for _ in 1..n {
        nodes.push(NodeSpec::sensor(
            rng.random_range(-1000.0..1000.0),
            rng.random_range(-1000.0..1000.0),
            rng.random_range(0.5..1.5),
        ));
    }
    NetworkSpec::new(nodes, EnergyParams::default()).unwrap()
}

/// Attaches active sensors in random order to random already-attached nodes.
pub fn random_topology_for(spec: &NetworkSpec, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sensors: Vec<NodeId> = spec.active_sensors().collect();
    sensors.shuffle(&mut rng);
    let mut attached = vec![NodeId::GATEWAY];
    let mut parent = vec![None; spec.node_count()];
    for s in sensors {
        parent[s.0] = Some(attached[rng.random_range(0..attached.len())]);
        attached.push(s);
    }
    Topology::from_parents(parent)
}

/// Samples at distinct random non-terminal states with random target policies
/// and values near 1.
pub fn random_samples(mdp: &crate::mdp::TopologyMdp, count: usize, seed: u64) -> Vec<crate::nn::EpisodeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::new();
    while out.len() < count {
        let mut state = mdp.initial_state().unwrap();
        let depth = rng.random_range(0..mdp.horizon());
        for _ in 0..depth {
            let actions = state.valid_actions();
            state = state.apply(actions[rng.random_range(0..actions.len())]).unwrap();
        }
        if !seen.insert(state.key()) {
            continue;
        }
        let mask = state.valid_mask();
        let mut target: Vec<f64> = mask.iter().map(|&m| if m { rng.random_range(0.0..1.0) } else { 0.0 }).collect();
        let sum: f64 = target.iter().sum();
        target.iter_mut().for_each(|t| *t /= sum);
        out.push(crate::nn::EpisodeSample {
            encoded_state: mdp.encode_state(&state),
            valid_mask: mask,
            target_policy: target,
            target_value: rng.random_range(0.5..1.5),
        });
    }
    out
}
