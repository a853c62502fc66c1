use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{ReplayCapacity, TrainError};
use crate::mdp::{StateKey, TopologyMdp};
use crate::nn::EpisodeSample;

/// A training sample together with the state it was recorded in.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySample {
    pub state: StateKey,
    pub sample: EpisodeSample,
}

/// On-disk form: the state is stored as its parent array and re-encoded on load.
#[derive(Serialize, Deserialize)]
struct StoredSample {
    parents: Vec<u32>,
    policy: Vec<(usize, f64)>,
    value: f64,
}

/// FIFO of whole episodes; the oldest episode is evicted first.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: ReplayCapacity,
    episodes: VecDeque<Vec<ReplaySample>>,
}

impl ReplayBuffer {
    pub fn new(capacity: ReplayCapacity) -> Self {
        Self { capacity, episodes: VecDeque::new() }
    }

    pub fn capacity(&self) -> ReplayCapacity {
        self.capacity
    }

    pub fn push_episode(&mut self, samples: Vec<ReplaySample>) {
        self.episodes.push_back(samples);
        if let ReplayCapacity::Episodes(cap) = self.capacity {
            while self.episodes.len() > cap {
                self.episodes.pop_front();
            }
        }
    }

    /// Number of samples held.
    pub fn len(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn clear(&mut self) {
        self.episodes.clear();
    }

    /// Samples from oldest to newest.
    pub fn samples(&self) -> impl Iterator<Item = &ReplaySample> {
        self.episodes.iter().flatten()
    }

    /// One JSON line per episode.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for ep in &self.episodes {
            let stored: Vec<StoredSample> = ep
                .iter()
                .map(|s| StoredSample {
                    parents: s.state.parents().to_vec(),
                    policy: s
                        .sample
                        .target_policy
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p != 0.0)
                        .map(|(i, &p)| (i, p))
                        .collect(),
                    value: s.sample.target_value,
                })
                .collect();
            out.push_str(&serde_json::to_string(&stored).expect("samples serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_json_lines(text: &str, capacity: ReplayCapacity, mdp: &TopologyMdp) -> Result<Self, TrainError> {
        let bad = |m: String| TrainError::Checkpoint(format!("replay buffer: {m}"));
        let mut buf = Self::new(capacity);
        let a = mdp.action_count();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let stored: Vec<StoredSample> = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let mut episode = Vec::with_capacity(stored.len());
            for s in stored {
                let key = StateKey::from_parents(s.parents);
                let state = mdp.state_from_key(&key).map_err(|e| bad(e.to_string()))?;
                let mask = state.valid_mask();
                let mut target = vec![0.0; a];
                for (i, p) in s.policy {
                    if i >= a || !mask[i] || !p.is_finite() {
                        return Err(bad(format!("policy entry {i} is not a valid action")));
                    }
                    target[i] = p;
                }
                if !s.value.is_finite() {
                    return Err(bad("non-finite value target".into()));
                }
                episode.push(ReplaySample {
                    sample: EpisodeSample {
                        encoded_state: mdp.encode_state(&state),
                        valid_mask: mask,
                        target_policy: target,
                        target_value: s.value,
                    },
                    state: key,
                });
            }
            buf.push_episode(episode);
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpOptions;
    use crate::testutil::{random_samples, random_spec};
    use std::sync::Arc;

    fn tagged(value: f64) -> ReplaySample {
        ReplaySample {
            state: StateKey::from_parents(vec![u32::MAX]),
            sample: EpisodeSample { encoded_state: vec![], valid_mask: vec![], target_policy: vec![], target_value: value },
        }
    }

    #[test]
    fn evicts_oldest_episodes_first() {
        let mut b = ReplayBuffer::new(ReplayCapacity::Episodes(3));
        for e in 0..7 {
            b.push_episode(vec![tagged(e as f64), tagged(e as f64)]);
            assert!(b.episode_count() <= 3);
            let first = b.samples().next().unwrap().sample.target_value;
            assert_eq!(first, (e as f64 - 2.0).max(0.0));
        }
        assert_eq!(b.len(), 6);
        let values: Vec<f64> = b.samples().map(|s| s.sample.target_value).collect();
        assert_eq!(values, vec![4.0, 4.0, 5.0, 5.0, 6.0, 6.0]);
        let mut u = ReplayBuffer::new(ReplayCapacity::Unbounded);
        for e in 0..50 {
            u.push_episode(vec![tagged(e as f64)]);
        }
        assert_eq!(u.len(), 50);
    }

    #[test]
    fn json_lines_round_trip() {
        let mdp = TopologyMdp::new(Arc::new(random_spec(6, 2)), MdpOptions::default()).unwrap();
        let samples = random_samples(&mdp, 9, 3);
        let mut b = ReplayBuffer::new(ReplayCapacity::Episodes(5));
        for chunk in samples.chunks(3) {
            b.push_episode(
                chunk
                    .iter()
                    .map(|s| {
                        // recover the state key from the adjacency plane
                        let n = 6;
                        let mut parents = vec![u32::MAX; n];
                        for c in 0..n {
                            for p in 0..n {
                                if s.encoded_state[c * n + p] == 1.0 {
                                    parents[c] = p as u32;
                                }
                            }
                        }
                        ReplaySample { state: StateKey::from_parents(parents), sample: s.clone() }
                    })
                    .collect(),
            );
        }
        let text = b.to_json_lines();
        let back = ReplayBuffer::from_json_lines(&text, ReplayCapacity::Episodes(5), &mdp).unwrap();
        assert_eq!(back, b);
        assert!(ReplayBuffer::from_json_lines("[{\"parents\":[1],\"policy\":[],\"value\":1}]", ReplayCapacity::Unbounded, &mdp).is_err());
    }
}
