use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ReplaySample, TrainConfig, TrainError};
use crate::mcts::{Evaluator, SearchTree};
use crate::mdp::{Action, TopologyMdp, TopologyState};
use crate::model::Topology;
use crate::nn::{EpisodeSample, PolicyValueNet};
use crate::seed::derive_seed;

/// One self-play construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub samples: Vec<ReplaySample>,
    /// Terminal reward, copied into every sample's value target.
    pub reward: f64,
    pub topology: Topology,
}

fn sample_action(dist: &[f64], rng: &mut ChaCha8Rng) -> Result<usize, TrainError> {
    let w = WeightedIndex::new(dist).map_err(|e| TrainError::Config(format!("bad action distribution: {e}")))?;
    Ok(w.sample(rng))
}

/// Builds one tree with search at every step, committing actions drawn from
/// the root visit distribution.
pub fn run_episode(mdp: &TopologyMdp, eval: &dyn Evaluator, config: &TrainConfig, seed: u64) -> Result<Episode, TrainError> {
    let mut tree = SearchTree::new(config.c_puct, derive_seed(seed, "search", &[])).with_root_noise(config.root_noise);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "commit", &[]));
    let mut state = mdp.initial_state()?;
    let mut samples = Vec::with_capacity(mdp.horizon());
    while !state.is_terminal() {
        let dist = tree.run_simulations(mdp, &state, eval, config.sims_per_state)?;
        if log::log_enabled!(log::Level::Trace) {
            log::trace!("root table at step {}:\n{}", state.step(), tree.root_table_csv(mdp, &state));
        }
        let a = sample_action(&dist, &mut rng)?;
        samples.push(ReplaySample {
            state: state.key(),
            sample: EpisodeSample {
                encoded_state: mdp.encode_state(&state),
                valid_mask: state.valid_mask(),
                target_policy: dist,
                target_value: 0.0,
            },
        });
        state = state.apply(Action::from_index(a, mdp.node_count()))?;
        if config.tree_reuse {
            tree.retain_subtree(&state);
        } else {
            tree.clear();
        }
    }
    let reward = mdp.terminal_reward(&state)?;
    for s in &mut samples {
        s.sample.target_value = reward;
    }
    Ok(Episode { samples, reward, topology: state.topology() })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Draw each action from the network's masked policy.
    #[default]
    Sample,
    /// Take the most probable action (lowest index on ties).
    Greedy,
}

/// Lifetimes (whole rounds) of trees built by the network without search.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub best: u64,
    pub best_index: usize,
    pub lifetimes: Vec<u64>,
    pub topologies: Vec<Topology>,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Builds `realizations` trees in lock step, one batched forward pass per
/// construction step. Greedy mode builds a single tree.
pub fn evaluate(
    mdp: &TopologyMdp,
    net: &PolicyValueNet,
    realizations: usize,
    mode: EvalMode,
    seed: u64,
) -> Result<Evaluation, TrainError> {
    let count = if mode == EvalMode::Greedy { 1 } else { realizations.max(1) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = mdp.initial_state()?;
    let mut states: Vec<TopologyState> = vec![initial; count];
    let (len, a) = (mdp.encoded_len(), mdp.action_count());
    let mut inputs = vec![0.0; count * len];
    let mut masks = vec![false; count * a];
    for _ in 0..mdp.horizon() {
        for (i, s) in states.iter().enumerate() {
            mdp.encode_into(s, &mut inputs[i * len..(i + 1) * len]);
            masks[i * a..(i + 1) * a].copy_from_slice(&s.valid_mask());
        }
        let (policy, _) = net.forward_batch(&inputs, &masks, count)?;
        for (i, s) in states.iter_mut().enumerate() {
            let p = &policy[i * a..(i + 1) * a];
            let idx = match mode {
                EvalMode::Greedy => argmax(p),
                EvalMode::Sample => sample_action(p, &mut rng)?,
            };
            *s = s.apply(Action::from_index(idx, mdp.node_count()))?;
        }
    }
    let mut lifetimes = Vec::with_capacity(count);
    let mut topologies = Vec::with_capacity(count);
    for s in &states {
        let t = s.topology();
        t.validate(mdp.spec())?;
        lifetimes.push(mdp.lifetime(s)?.rounds);
        topologies.push(t);
    }
    let n = count as f64;
    let mean = lifetimes.iter().map(|&l| l as f64).sum::<f64>() / n;
    let std = (lifetimes.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let best_index = (0..count).fold(0, |b, i| if lifetimes[i] > lifetimes[b] { i } else { b });
    Ok(Evaluation { mean, std, best: lifetimes[best_index], best_index, lifetimes, topologies })
}
