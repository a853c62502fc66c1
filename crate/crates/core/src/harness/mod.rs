//! Experiment orchestration: where the instance comes from, what to run on it,
//! and the files a run leaves behind.
//!
//! ```text
//! <out>/config.toml        effective configuration
//! <out>/instance.txt       the network as first seen
//! <out>/baselines.csv      star, random (mean over seeds), MST, optional oracle
//! <out>/metrics.csv        one row per iteration
//! <out>/timing.csv         wall-clock seconds per iteration
//! <out>/checkpoints/       resumable state after every iteration
//! <out>/topologies/        baseline and final trees as topology files
//! ```

mod artifacts;
mod generate;
mod script;

pub use artifacts::{metrics_text, parse_baselines_csv, parse_metrics_csv, BaselineRow, MetricsRow, BASELINES_HEADER};
pub use generate::{generate_instance, sample_disc, GeneratorParams};
pub use script::{parse_remove_arg, parse_restore_arg, validate_script, ChangeEntry};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{brute_force_optimal, mst_topology, random_topology, star_topology, OracleError, OracleResult, ORACLE_MAX_NODES};
use crate::mdp::MdpError;
use crate::model::{
    parse_instance, write_instance, write_topology_file, AggregationMode, Lifetime, LifetimeEvaluator, ModelError,
    NetworkSpec, ParseError, Topology,
};
use crate::seed::derive_seed;
use crate::trainer::{
    apply_network_change, evaluate, latest_checkpoint, EvalMode, Evaluation, IterationReport, TrainConfig, TrainError,
    Trainer, RANDOM_BASELINE_TREES,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub const CONFIG_FILE: &str = "config.toml";
pub const INSTANCE_FILE: &str = "instance.txt";
pub const BASELINES_FILE: &str = "baselines.csv";
pub const TOPOLOGIES_DIR: &str = "topologies";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, contents).map_err(io(path))
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(io(path))
}

pub fn load_instance(path: &Path) -> Result<NetworkSpec, HarnessError> {
    parse_instance(&read(path)?).map_err(|source| HarnessError::Parse { path: path.to_path_buf(), source })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceSource {
    File(PathBuf),
    Generate(GeneratorParams),
}

impl Default for InstanceSource {
    fn default() -> Self {
        InstanceSource::Generate(GeneratorParams::default())
    }
}

impl InstanceSource {
    pub fn load(&self) -> Result<NetworkSpec, HarnessError> {
        match self {
            InstanceSource::File(p) => load_instance(p),
            InstanceSource::Generate(g) => Ok(g.generate()?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    /// Compute the heuristic baselines.
    pub baselines: bool,
    /// Also run the exhaustive search (small networks only).
    pub oracle: bool,
    /// Run the learning loop.
    pub training: bool,
    pub train: TrainConfig,
    pub changes: Vec<ChangeEntry>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            instance: InstanceSource::default(),
            baselines: true,
            oracle: false,
            training: true,
            train: TrainConfig::default(),
            changes: Vec::new(),
            out: PathBuf::from("run"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.train.validate()?;
        validate_script(&self.changes, self.train.iterations)?;
        if !self.changes.is_empty() && !self.training {
            return Err(HarnessError::Config("a change script needs training enabled".into()));
        }
        if let InstanceSource::Generate(g) = &self.instance {
            self.check_oracle(g.nodes - g.spare.min(g.nodes))?;
        }
        Ok(())
    }

    fn check_oracle(&self, active_nodes: usize) -> Result<(), HarnessError> {
        if self.oracle && active_nodes > ORACLE_MAX_NODES {
            return Err(HarnessError::Config(format!(
                "the oracle needs at most {ORACLE_MAX_NODES} active nodes, the instance has {active_nodes}"
            )));
        }
        Ok(())
    }

    /// Checks the configuration against the concrete network, including every
    /// scripted change in order.
    pub fn validate_for(&self, spec: &NetworkSpec) -> Result<(), HarnessError> {
        self.validate()?;
        self.check_oracle(spec.active_sensor_count() + 1)?;
        let mut s = spec.clone();
        for e in &self.changes {
            s = apply_network_change(&s, &e.change)
                .map_err(|err| HarnessError::Config(format!("change at iteration {}: {err}", e.at)))?;
        }
        Ok(())
    }
}

/// Baseline rows, the named baseline trees and the oracle result if one was run.
pub type Baselines = (Vec<BaselineRow>, Vec<(&'static str, Topology)>, Option<OracleResult>);

/// Star, random and MST lifetimes plus the exact optimum if requested.
pub fn compute_baselines(
    spec: &NetworkSpec,
    mode: AggregationMode,
    seed: u64,
    oracle: bool,
) -> Result<Baselines, HarnessError> {
    let mut ev = LifetimeEvaluator::new();
    let mut rows = Vec::new();
    let mut trees = Vec::new();
    let row = |method: &str, l: Lifetime| BaselineRow { method: method.into(), lifetime: l.rounds as f64, continuous: l.continuous };
    for (name, t) in [("star", star_topology(spec)), ("mst", mst_topology(spec))] {
        rows.push(row(name, ev.evaluate(spec, &t, mode)?));
        trees.push((name, t));
    }
    let (mut rounds, mut cont) = (0.0, 0.0);
    for k in 0..RANDOM_BASELINE_TREES {
        let t = random_topology(spec, derive_seed(seed, "random-baseline", &[k]))?;
        let l = ev.evaluate(spec, &t, mode)?;
        rounds += l.rounds as f64;
        cont += l.continuous;
        if k == 0 {
            trees.push(("random", t));
        }
    }
    let n = RANDOM_BASELINE_TREES as f64;
    rows.insert(1, BaselineRow { method: "random".into(), lifetime: rounds / n, continuous: cont / n });
    let best = if oracle {
        let r = brute_force_optimal(spec, mode)?;
        rows.push(row("oracle", r.best_lifetime));
        trees.push(("oracle", r.best_topology.clone()));
        Some(r)
    } else {
        None
    };
    Ok((rows, trees, best))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub baselines: Vec<BaselineRow>,
    pub oracle: Option<OracleResult>,
    pub reports: Vec<IterationReport>,
    /// Last checkpoint written, if training ran.
    pub checkpoint: Option<PathBuf>,
}

/// Runs everything the configuration asks for, writing artifacts under `config.out`.
/// Files written before a failure are left in place.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    let spec = config.instance.load()?;
    config.validate_for(&spec)?;
    let out = &config.out;
    fs::create_dir_all(out).map_err(io(out))?;
    write(&out.join(CONFIG_FILE), config.to_toml_string())?;
    write(&out.join(INSTANCE_FILE), write_instance(&spec))?;

    let mut outcome = ExperimentOutcome { baselines: Vec::new(), oracle: None, reports: Vec::new(), checkpoint: None };
    if config.baselines || config.oracle {
        let (rows, trees, oracle) = compute_baselines(&spec, config.train.mdp.aggregation, config.train.seed, config.oracle)?;
        write(&out.join(BASELINES_FILE), artifacts::baselines_csv(&rows))?;
        for (name, t) in &trees {
            write(&out.join(TOPOLOGIES_DIR).join(format!("{name}.txt")), write_topology_file(&spec, t))?;
        }
        for r in &rows {
            log::info!("{}: {} rounds", r.method, r.lifetime);
        }
        outcome.baselines = rows;
        outcome.oracle = oracle;
    }
    if config.training {
        let trainer = Trainer::new(spec, config.train.clone())?.with_output(out);
        drive(trainer, config, &mut outcome)?;
    }
    Ok(outcome)
}

/// Continues the run in `out` from its latest checkpoint.
pub fn resume_experiment(out: &Path) -> Result<ExperimentOutcome, HarnessError> {
    let mut config = ExperimentConfig::from_toml_str(&read(&out.join(CONFIG_FILE))?)?;
    config.out = out.to_path_buf();
    let ckpt = latest_checkpoint(out)?
        .ok_or_else(|| HarnessError::Config(format!("{} holds no checkpoint to resume from", out.display())))?;
    log::info!("resuming from {}", ckpt.display());
    let trainer = Trainer::resume(&ckpt)?.with_output(out);
    if trainer.config() != &config.train {
        return Err(HarnessError::Config("checkpoint was written under a different training configuration".into()));
    }
    let baselines = match fs::read_to_string(out.join(BASELINES_FILE)) {
        Ok(text) => parse_baselines_csv(&text)?,
        Err(_) => Vec::new(),
    };
    let mut outcome = ExperimentOutcome { baselines, oracle: None, reports: Vec::new(), checkpoint: None };
    drive(trainer, &config, &mut outcome)?;
    Ok(outcome)
}

fn drive(mut trainer: Trainer, config: &ExperimentConfig, outcome: &mut ExperimentOutcome) -> Result<(), HarnessError> {
    while !trainer.is_finished() {
        let next = trainer.iteration() + 1;
        if let Some(e) = config.changes.iter().find(|e| e.at == next) {
            trainer.apply_network_change(&e.change)?;
        }
        trainer.step()?;
    }
    if let Some(last) = trainer.reports().last() {
        let dir = config.out.join(TOPOLOGIES_DIR);
        write(&dir.join("final_best.txt"), write_topology_file(trainer.spec(), &last.best_topology))?;
        write(&dir.join("final_greedy.txt"), write_topology_file(trainer.spec(), &last.greedy_topology))?;
    }
    outcome.reports = trainer.reports().to_vec();
    outcome.checkpoint = trainer.last_checkpoint().map(PathBuf::from);
    Ok(())
}

/// Evaluates the network stored in a checkpoint on the network it was trained for.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    realizations: usize,
    mode: EvalMode,
    seed: u64,
) -> Result<(NetworkSpec, Evaluation), HarnessError> {
    let trainer = Trainer::resume(checkpoint)?;
    let ev = evaluate(trainer.mdp(), trainer.net(), realizations, mode, seed)?;
    Ok(((**trainer.spec()).clone(), ev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{NetShape, NetworkChange, ReplayCapacity};

    fn small_train(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            episodes_per_iter: 2,
            sims_per_state: 8,
            minibatch: 8,
            eval_realizations: 4,
            replay_capacity: ReplayCapacity::Episodes(4),
            seed: 5,
            net: NetShape { conv_blocks: 1, filters: 4, value_head_hidden: 8, ..NetShape::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_toml_round_trip_and_defaults() {
        let c = ExperimentConfig {
            changes: vec![parse_remove_arg("63:6,7,8").unwrap()],
            train: TrainConfig::full_scale(),
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
        let partial = ExperimentConfig::from_toml_str("oracle = true\n[instance.generate]\nnodes = 6\n").unwrap();
        assert_eq!(partial.instance, InstanceSource::Generate(GeneratorParams { nodes: 6, ..GeneratorParams::default() }));
        partial.validate().unwrap();
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn oracle_toggle_is_limited() {
        let c = ExperimentConfig { oracle: true, ..ExperimentConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("at most 9"));
    }

    #[test]
    fn baselines_only_run() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig {
            instance: InstanceSource::Generate(GeneratorParams::new(5, 1000.0, 2)),
            oracle: true,
            training: false,
            out: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        let o = run_experiment(&c).unwrap();
        let methods: Vec<&str> = o.baselines.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(methods, ["star", "random", "mst", "oracle"]);
        let best = o.baselines[3].lifetime;
        assert!(o.baselines.iter().all(|r| r.lifetime <= best));
        let text = fs::read_to_string(dir.path().join(BASELINES_FILE)).unwrap();
        assert_eq!(parse_baselines_csv(&text).unwrap(), o.baselines);
        let spec = load_instance(&dir.path().join(INSTANCE_FILE)).unwrap();
        assert_eq!(spec, c.instance.load().unwrap());
        assert!(dir.path().join(TOPOLOGIES_DIR).join("oracle.txt").is_file());
    }

    #[test]
    fn scripted_removal_marks_metrics_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig {
            instance: InstanceSource::Generate(GeneratorParams::new(6, 1000.0, 4)),
            train: small_train(4),
            changes: vec![parse_remove_arg("3:4,5").unwrap()],
            out: dir.path().join("a"),
            ..ExperimentConfig::default()
        };
        let full = run_experiment(&c).unwrap();
        assert_eq!(full.reports.len(), 4);
        let metrics = fs::read_to_string(c.out.join(crate::trainer::METRICS_FILE)).unwrap();
        let rows = parse_metrics_csv(&metrics).unwrap();
        assert_eq!(rows[2].network_change, "remove 4 5");
        assert!(rows.iter().enumerate().all(|(i, r)| i == 2 || r.network_change.is_empty()));
        assert_eq!(artifacts::metrics_text(&rows), metrics);
        assert!(rows[3].active_sensors == 3 && rows[1].active_sensors == 5);

        // Interrupted after iteration 2, then resumed: same metrics.
        let b = ExperimentConfig { out: dir.path().join("b"), train: TrainConfig { iterations: 4, ..small_train(4) }, ..c.clone() };
        let mut trainer = Trainer::new(b.instance.load().unwrap(), b.train.clone()).unwrap().with_output(&b.out);
        fs::create_dir_all(&b.out).unwrap();
        fs::write(b.out.join(CONFIG_FILE), b.to_toml_string()).unwrap();
        trainer.step().unwrap();
        trainer.step().unwrap();
        drop(trainer);
        let resumed = resume_experiment(&b.out).unwrap();
        assert_eq!(resumed.reports.iter().map(|r| r.csv_row()).collect::<Vec<_>>(), full.reports.iter().map(|r| r.csv_row()).collect::<Vec<_>>());
        assert_eq!(fs::read_to_string(b.out.join(crate::trainer::METRICS_FILE)).unwrap(), metrics);
    }

    #[test]
    fn bad_scripts_are_refused() {
        let base = ExperimentConfig {
            instance: InstanceSource::Generate(GeneratorParams::new(6, 1000.0, 4)),
            train: small_train(4),
            ..ExperimentConfig::default()
        };
        let spec = base.instance.load().unwrap();
        let with = |changes| ExperimentConfig { changes, ..base.clone() };
        assert!(with(vec![parse_remove_arg("2:0").unwrap()]).validate_for(&spec).is_err());
        assert!(with(vec![parse_remove_arg("2:1").unwrap(), parse_remove_arg("3:1").unwrap()]).validate_for(&spec).is_err());
        assert!(with(vec![parse_remove_arg("9:1").unwrap()]).validate_for(&spec).is_err());
        let ok = with(vec![
            parse_remove_arg("2:1").unwrap(),
            ChangeEntry { at: 3, change: NetworkChange::Restore(vec![1]) },
        ]);
        ok.validate_for(&spec).unwrap();
    }
}
