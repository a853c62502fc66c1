//! The outer loop: self-play episodes with search, a training pass over the
//! replay buffer, and an evaluation of the network on its own.
//!
//! Every source of randomness is a sub-seed of the run seed keyed by iteration
//! (and episode), so a checkpoint written after iteration `k` determines
//! iterations `k+1..` exactly.

mod change;
mod config;
mod episode;
mod persist;
mod replay;

pub use change::{apply_network_change, NetworkChange, NewSensor};
pub use config::{NetShape, ReplayCapacity, TrainConfig};
pub use episode::{evaluate, run_episode, EvalMode, Episode, Evaluation};
pub use persist::{checkpoint_dir_name, latest_checkpoint, METRICS_FILE, TIMING_FILE};
pub use replay::{ReplayBuffer, ReplaySample};

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{mst_topology, random_topology, star_topology};
use crate::mcts::MctsError;
use crate::mdp::{MdpError, TopologyMdp};
use crate::model::{LifetimeEvaluator, ModelError, NetworkSpec, Topology};
use crate::nn::{EpisodeSample, NetError, PolicyValueNet};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("network change refused: {0}")]
    Change(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Mcts(#[from] MctsError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Random trees averaged into the random baseline.
pub const RANDOM_BASELINE_TREES: u64 = 100;

/// Heuristic lifetimes (whole rounds) on the current set of active sensors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineLifetimes {
    pub star: u64,
    pub random_mean: f64,
    pub mst: u64,
}

impl BaselineLifetimes {
    pub fn compute(mdp: &TopologyMdp, seed: u64) -> Result<Self, TrainError> {
        let spec = mdp.spec();
        let mode = mdp.options().aggregation;
        let mut ev = LifetimeEvaluator::new();
        let mut rounds = |t: &Topology| ev.evaluate(spec, t, mode).map(|l| l.rounds);
        let star = rounds(&star_topology(spec))?;
        let mst = rounds(&mst_topology(spec))?;
        let mut total = 0.0;
        for k in 0..RANDOM_BASELINE_TREES {
            total += rounds(&random_topology(spec, derive_seed(seed, "random-baseline", &[k]))?)? as f64;
        }
        Ok(Self { star, random_mean: total / RANDOM_BASELINE_TREES as f64, mst })
    }
}

/// Outcome of one iteration. Lifetimes are whole rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// 1-based.
    pub iteration: usize,
    pub mean_lifetime: f64,
    pub std_lifetime: f64,
    pub best_lifetime: u64,
    pub greedy_lifetime: u64,
    /// Mean minibatch loss of the training pass.
    pub loss: f64,
    pub episodes: usize,
    pub sims: usize,
    pub episode_rewards: Vec<f64>,
    pub active_sensors: usize,
    /// Network change that took effect at the start of this iteration.
    pub network_change: Option<String>,
    pub baselines: BaselineLifetimes,
    pub best_topology: Topology,
    pub greedy_topology: Topology,
    pub wall_seconds: f64,
}

/// A network change and the iteration it preceded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub before_iteration: usize,
    pub change: NetworkChange,
}

/// Training state between iterations.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    mdp: TopologyMdp,
    net: PolicyValueNet,
    buffer: ReplayBuffer,
    reports: Vec<IterationReport>,
    changes: Vec<ChangeRecord>,
    baselines: BaselineLifetimes,
    pending_change: Option<String>,
    out_dir: Option<PathBuf>,
    last_checkpoint: Option<String>,
}

impl Trainer {
    pub fn new(spec: NetworkSpec, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let mdp = TopologyMdp::new(Arc::new(spec), config.mdp)?;
        let net_config = config.net.net_config(&mdp, derive_seed(config.seed, "net-init", &[]));
        let net = PolicyValueNet::new(net_config)?;
        let baselines = BaselineLifetimes::compute(&mdp, config.seed)?;
        Ok(Self {
            buffer: ReplayBuffer::new(config.replay_capacity),
            config,
            mdp,
            net,
            reports: Vec::new(),
            changes: Vec::new(),
            baselines,
            pending_change: None,
            out_dir: None,
            last_checkpoint: None,
        })
    }

    /// Write metrics and a checkpoint under `dir` after every iteration.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn spec(&self) -> &Arc<NetworkSpec> {
        self.mdp.spec()
    }

    pub fn mdp(&self) -> &TopologyMdp {
        &self.mdp
    }

    pub fn net(&self) -> &PolicyValueNet {
        &self.net
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn reports(&self) -> &[IterationReport] {
        &self.reports
    }

    pub fn changes(&self) -> &[ChangeRecord] {
        &self.changes
    }

    pub fn baselines(&self) -> BaselineLifetimes {
        self.baselines
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.reports.len()
    }

    pub fn is_finished(&self) -> bool {
        self.iteration() >= self.config.iterations
    }

    /// Switches to a changed network before the next iteration. The weights
    /// carry over; replay samples recorded on the old network are dropped.
    pub fn apply_network_change(&mut self, change: &NetworkChange) -> Result<(), TrainError> {
        let spec = apply_network_change(self.mdp.spec(), change)?;
        let mdp = TopologyMdp::new(Arc::new(spec), self.config.mdp)?;
        self.baselines = BaselineLifetimes::compute(&mdp, self.config.seed)?;
        self.mdp = mdp;
        self.buffer.clear();
        self.changes.push(ChangeRecord { before_iteration: self.iteration() + 1, change: change.clone() });
        let text = change.to_string();
        self.pending_change = Some(match self.pending_change.take() {
            Some(prev) => format!("{prev}; {text}"),
            None => text,
        });
        log::info!("network change before iteration {}: {change}", self.iteration() + 1);
        Ok(())
    }

    /// Runs one iteration, then writes metrics and a checkpoint if an output
    /// directory is set.
    pub fn step(&mut self) -> Result<&IterationReport, TrainError> {
        let start = Instant::now();
        let it = self.iteration() + 1;
        let cfg = &self.config;
        let (mdp, net) = (&self.mdp, &self.net);
        let episodes: Vec<Episode> = (0..cfg.episodes_per_iter as u64)
            .into_par_iter()
            .map(|e| run_episode(mdp, net, cfg, derive_seed(cfg.seed, "episode", &[it as u64, e])))
            .collect::<Result<_, _>>()?;
        let episode_rewards: Vec<f64> = episodes.iter().map(|e| e.reward).collect();
        for e in episodes {
            self.buffer.push_episode(e.samples);
        }

        let mut order: Vec<usize> = (0..self.buffer.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle", &[it as u64])));
        let all: Vec<&EpisodeSample> = self.buffer.samples().map(|s| &s.sample).collect();
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.minibatch) {
            let batch: Vec<EpisodeSample> = chunk.iter().map(|&i| all[i].clone()).collect();
            losses.push(self.net.train_step(&batch, cfg.learning_rate)?);
        }
        let loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;

        let eval_seed = derive_seed(cfg.seed, "evaluate", &[it as u64]);
        let sampled = evaluate(&self.mdp, &self.net, cfg.eval_realizations, EvalMode::Sample, eval_seed)?;
        let greedy = evaluate(&self.mdp, &self.net, 1, EvalMode::Greedy, eval_seed)?;
        let report = IterationReport {
            iteration: it,
            mean_lifetime: sampled.mean,
            std_lifetime: sampled.std,
            best_lifetime: sampled.best,
            greedy_lifetime: greedy.best,
            loss,
            episodes: cfg.episodes_per_iter,
            sims: cfg.sims_per_state,
            episode_rewards,
            active_sensors: self.mdp.spec().active_sensor_count(),
            network_change: self.pending_change.take(),
            baselines: self.baselines,
            best_topology: sampled.topologies[sampled.best_index].clone(),
            greedy_topology: greedy.topologies[0].clone(),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "iteration {it}: mean {:.1} std {:.1} best {} greedy {} loss {:.4} (mst {})",
            report.mean_lifetime,
            report.std_lifetime,
            report.best_lifetime,
            report.greedy_lifetime,
            report.loss,
            report.baselines.mst
        );
        self.reports.push(report);
        if let Some(dir) = self.out_dir.clone() {
            self.persist(&dir)?;
        }
        Ok(self.reports.last().expect("just pushed"))
    }

    /// Runs the remaining iterations.
    pub fn run(&mut self) -> Result<(), TrainError> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    /// The checkpoint this trainer was resumed from or last wrote.
    pub fn last_checkpoint(&self) -> Option<&str> {
        self.last_checkpoint.as_deref()
    }

    pub fn resume(checkpoint: &Path) -> Result<Self, TrainError> {
        persist::load(checkpoint)
    }
}

/// Trains from scratch for `config.iterations` iterations without writing files.
pub fn run_training(spec: NetworkSpec, config: TrainConfig) -> Result<(PolicyValueNet, Vec<IterationReport>), TrainError> {
    let mut t = Trainer::new(spec, config)?;
    t.run()?;
    Ok((t.net, t.reports))
}

/// Header of the per-iteration metrics file.
pub const METRICS_HEADER: &str = "iteration,mean_lifetime,std_lifetime,best_lifetime,greedy_lifetime,loss,episodes,sims,mean_episode_reward,active_sensors,network_change,star_lifetime,random_mean_lifetime,mst_lifetime";

impl IterationReport {
    /// One metrics row. Wall time is left out so that reruns are byte-identical.
    pub fn csv_row(&self) -> String {
        let reward = self.episode_rewards.iter().sum::<f64>() / self.episode_rewards.len().max(1) as f64;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.mean_lifetime,
            self.std_lifetime,
            self.best_lifetime,
            self.greedy_lifetime,
            self.loss,
            self.episodes,
            self.sims,
            reward,
            self.active_sensors,
            self.network_change.as_deref().unwrap_or(""),
            self.baselines.star,
            self.baselines.random_mean,
            self.baselines.mst
        )
    }
}

pub fn metrics_csv(reports: &[IterationReport]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn timing_csv(reports: &[IterationReport]) -> String {
    let mut out = String::from("iteration,wall_seconds\n");
    for r in reports {
        out.push_str(&format!("{},{}\n", r.iteration, r.wall_seconds));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcts::UniformEvaluator;
    use crate::mdp::{Action, MdpOptions};
    use crate::model::NodeId;
    use crate::nn::NetConfig;
    use crate::testutil::random_spec;

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: 2,
            episodes_per_iter: 2,
            sims_per_state: 8,
            minibatch: 4,
            eval_realizations: 5,
            replay_capacity: ReplayCapacity::Episodes(4),
            seed,
            net: NetShape { conv_blocks: 1, filters: 4, value_head_hidden: 8, ..NetShape::default() },
            ..TrainConfig::default()
        }
    }

    fn mdp(n: usize, seed: u64) -> TopologyMdp {
        TopologyMdp::new(Arc::new(random_spec(n, seed)), MdpOptions::default()).unwrap()
    }

    #[test]
    fn single_sensor_episode_has_one_forced_sample() {
        let m = mdp(2, 1);
        let ep = run_episode(&m, &UniformEvaluator::default(), &tiny_config(0), 3).unwrap();
        assert_eq!(ep.samples.len(), 1);
        let s = &ep.samples[0].sample;
        assert_eq!(s.target_policy.iter().filter(|&&p| p > 0.0).count(), 1);
        assert_eq!(s.target_policy[Action::new(1, 0).index(2)], 1.0);
        assert!((ep.reward - 1.0).abs() < 1e-12);
        assert_eq!(s.target_value, ep.reward);
    }

    #[test]
    fn episodes_have_one_sample_per_sensor_and_valid_targets() {
        for n in [3, 5, 7] {
            let m = mdp(n, n as u64);
            let ep = run_episode(&m, &UniformEvaluator::default(), &tiny_config(1), 9).unwrap();
            assert_eq!(ep.samples.len(), m.horizon());
            ep.topology.validate(m.spec()).unwrap();
            for s in &ep.samples {
                let total: f64 = s.sample.target_policy.iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
                for (p, &ok) in s.sample.target_policy.iter().zip(&s.sample.valid_mask) {
                    assert!(ok || *p == 0.0);
                }
                assert_eq!(s.sample.target_value, ep.reward);
            }
        }
    }

    #[test]
    fn episodes_are_reproducible() {
        let m = mdp(6, 4);
        let c = tiny_config(2);
        let net = PolicyValueNet::new(c.net.net_config(&m, 5)).unwrap();
        let a = run_episode(&m, &net, &c, 17).unwrap();
        let b = run_episode(&m, &net, &c, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_iteration_on_three_nodes() {
        let c = TrainConfig { iterations: 1, episodes_per_iter: 1, replay_capacity: ReplayCapacity::Episodes(1), ..tiny_config(3) };
        let mut t = Trainer::new(random_spec(3, 5), c).unwrap();
        let r = t.step().unwrap().clone();
        assert_eq!(t.buffer().len(), 2);
        assert_eq!(r.iteration, 1);
        assert!(r.loss.is_finite());
        assert!(t.is_finished());
        assert!(r.best_lifetime as f64 >= r.mean_lifetime);
    }

    #[test]
    fn zero_network_samples_uniformly() {
        // Sampling from a uniform policy is the random-attachment baseline.
        let m = mdp(5, 6);
        let mut cfg = NetConfig::for_mdp(&m, 0);
        cfg.use_batchnorm = false;
        let net = PolicyValueNet::zeros(cfg).unwrap();
        let ev = evaluate(&m, &net, 400, EvalMode::Sample, 1).unwrap();
        assert_eq!(ev.lifetimes.len(), 400);
        let mut seen = std::collections::HashSet::new();
        for t in &ev.topologies {
            t.validate(m.spec()).unwrap();
            seen.insert(t.clone());
        }
        assert!(seen.len() > 50, "only {} distinct trees", seen.len());
        let g1 = evaluate(&m, &net, 7, EvalMode::Greedy, 1).unwrap();
        let g2 = evaluate(&m, &net, 9, EvalMode::Greedy, 2).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.lifetimes.len(), 1);
    }

    #[test]
    fn resume_continues_identically() {
        let spec = random_spec(5, 7);
        let c = TrainConfig { iterations: 3, ..tiny_config(11) };
        let mut straight = Trainer::new(spec.clone(), c.clone()).unwrap();
        straight.run().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut first = Trainer::new(spec, c).unwrap().with_output(dir.path());
        first.step().unwrap();
        first.step().unwrap();
        drop(first);
        let ckpt = latest_checkpoint(dir.path()).unwrap().unwrap();
        assert!(ckpt.ends_with("iter_0002"));
        let mut resumed = Trainer::resume(&ckpt).unwrap();
        assert_eq!(resumed.iteration(), 2);
        resumed.run().unwrap();
        assert_eq!(resumed.net(), straight.net());
        let strip = |r: &[IterationReport]| r.iter().map(IterationReport::csv_row).collect::<Vec<_>>();
        assert_eq!(strip(resumed.reports()), strip(straight.reports()));
        let metrics = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(metrics, metrics_csv(straight.reports()));
    }

    #[test]
    fn removed_sensors_stay_out_of_later_trees() {
        let c = TrainConfig { iterations: 2, ..tiny_config(4) };
        let mut t = Trainer::new(random_spec(7, 8), c).unwrap();
        t.step().unwrap();
        t.apply_network_change(&NetworkChange::Remove(vec![5, 6])).unwrap();
        assert!(t.buffer().is_empty());
        let r = t.step().unwrap().clone();
        assert_eq!(r.network_change.as_deref(), Some("remove 5 6"));
        assert_eq!(r.active_sensors, 4);
        for topo in [&r.best_topology, &r.greedy_topology] {
            assert_eq!(topo.parent(NodeId(5)), None);
            assert_eq!(topo.parent(NodeId(6)), None);
            assert!(topo.edges().all(|(a, b)| a.index() < 5 && b.index() < 5));
        }
        assert_eq!(t.reports()[0].network_change, None);
    }
}
