use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::mcts::DirichletNoise;
use crate::mdp::{Encoding, MdpOptions, TopologyMdp};
use crate::nn::NetConfig;

/// How much self-play data the replay buffer keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayCapacity {
    /// The most recent `n` episodes.
    Episodes(usize),
    Unbounded,
}

/// Architecture knobs; the input shape comes from the network being trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetShape {
    pub conv_blocks: usize,
    pub filters: usize,
    pub value_head_hidden: usize,
    pub use_residual: bool,
    pub use_batchnorm: bool,
    pub l2: f64,
}

impl Default for NetShape {
    fn default() -> Self {
        let d = NetConfig::new(1, 1, 0);
        Self {
            conv_blocks: d.conv_blocks,
            filters: d.filters,
            value_head_hidden: d.value_head_hidden,
            use_residual: d.use_residual,
            use_batchnorm: d.use_batchnorm,
            l2: d.l2,
        }
    }
}

impl NetShape {
    pub fn net_config(&self, mdp: &TopologyMdp, weight_init_seed: u64) -> NetConfig {
        NetConfig {
            conv_blocks: self.conv_blocks,
            filters: self.filters,
            value_head_hidden: self.value_head_hidden,
            use_residual: self.use_residual,
            use_batchnorm: self.use_batchnorm,
            l2: self.l2,
            ..NetConfig::for_mdp(mdp, weight_init_seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    /// Simulations per visited state.
    pub sims_per_state: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub c_puct: f64,
    pub replay_capacity: ReplayCapacity,
    pub eval_realizations: usize,
    pub seed: u64,
    /// Keep search statistics below the committed action between moves.
    pub tree_reuse: bool,
    pub root_noise: Option<DirichletNoise>,
    pub mdp: MdpOptions,
    pub net: NetShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            episodes_per_iter: 10,
            sims_per_state: 100,
            minibatch: 16,
            learning_rate: 1e-3,
            c_puct: 1.5,
            replay_capacity: ReplayCapacity::Episodes(20),
            eval_realizations: 100,
            seed: 0,
            tree_reuse: true,
            root_noise: None,
            mdp: MdpOptions::default(),
            net: NetShape::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for full-size runs: 10 episodes, 100 simulations per move, minibatch 16, learning rate 1e-6.
    pub fn full_scale() -> Self {
        Self { episodes_per_iter: 10, sims_per_state: 100, minibatch: 16, learning_rate: 1e-6, ..Self::default() }
    }

    /// Drops the additions made on top of the plain algorithm: the replay
    /// buffer grows without bound, each move searches a fresh tree, and the
    /// state encoding is the adjacency matrix alone.
    pub fn plain(mut self) -> Self {
        self.replay_capacity = ReplayCapacity::Unbounded;
        self.tree_reuse = false;
        self.root_noise = None;
        self.mdp.encoding = Encoding::Bare;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, v) in [
            ("iterations", self.iterations),
            ("episodes_per_iter", self.episodes_per_iter),
            ("sims_per_state", self.sims_per_state),
            ("minibatch", self.minibatch),
            ("eval_realizations", self.eval_realizations),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        if !(self.c_puct > 0.0 && self.c_puct.is_finite()) {
            return bad("c_puct must be positive".into());
        }
        if let ReplayCapacity::Episodes(n) = self.replay_capacity {
            if n < self.episodes_per_iter {
                return bad(format!(
                    "replay capacity of {n} episodes cannot hold one iteration of {} episodes",
                    self.episodes_per_iter
                ));
            }
        }
        if let Some(n) = self.root_noise {
            if !(n.alpha > 0.0 && (0.0..=1.0).contains(&n.fraction)) {
                return bad("root noise needs alpha > 0 and fraction in [0, 1]".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_presets_validate() {
        TrainConfig::default().validate().unwrap();
        let p = TrainConfig::full_scale();
        p.validate().unwrap();
        assert_eq!((p.episodes_per_iter, p.sims_per_state, p.minibatch, p.learning_rate), (10, 100, 16, 1e-6));
        let s = p.plain();
        s.validate().unwrap();
        assert_eq!(s.replay_capacity, ReplayCapacity::Unbounded);
        assert!(!s.tree_reuse);
        assert_eq!(s.mdp.encoding, Encoding::Bare);
    }

    #[test]
    fn rejects_degenerate_values() {
        let base = TrainConfig::default();
        assert!(TrainConfig { minibatch: 0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { c_puct: 0.0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { replay_capacity: ReplayCapacity::Episodes(3), ..base }.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig { root_noise: Some(DirichletNoise { alpha: 0.3, fraction: 0.25 }), ..TrainConfig::full_scale() };
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), c);
        let u: TrainConfig = toml::from_str("replay_capacity = \"unbounded\"\niterations = 3").unwrap();
        assert_eq!((u.replay_capacity, u.iterations), (ReplayCapacity::Unbounded, 3));
    }
}
