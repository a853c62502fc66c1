//! Run directory layout:
//!
//! ```text
//! <out>/metrics.csv
//! <out>/timing.csv
//! <out>/checkpoints/iter_0007/{net.bin, replay.jsonl, state.json, instance.txt}
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    metrics_csv, timing_csv, BaselineLifetimes, ChangeRecord, IterationReport, ReplayBuffer, TrainConfig,
    TrainError, Trainer,
};
use crate::mdp::TopologyMdp;
use crate::model::{parse_instance, spec_digest, write_instance};
use crate::nn::{PolicyValueNet, Provenance};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
const CHECKPOINTS: &str = "checkpoints";
const NET_FILE: &str = "net.bin";
const REPLAY_FILE: &str = "replay.jsonl";
const STATE_FILE: &str = "state.json";
const INSTANCE_FILE: &str = "instance.txt";

#[derive(Serialize, Deserialize)]
struct SavedState {
    config: TrainConfig,
    iteration: usize,
    reports: Vec<IterationReport>,
    changes: Vec<ChangeRecord>,
    pending_change: Option<String>,
    /// Checkpoint the run was resumed from before writing this one.
    parent_checkpoint: Option<String>,
    /// Digest of `instance.txt`.
    spec_hash: String,
}

pub fn checkpoint_dir_name(iteration: usize) -> String {
    format!("iter_{iteration:04}")
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), TrainError> {
    fs::write(path, contents).map_err(io(path))
}

fn read(path: &Path) -> Result<String, TrainError> {
    fs::read_to_string(path).map_err(io(path))
}

/// The highest-numbered complete checkpoint under `out`.
pub fn latest_checkpoint(out: &Path) -> Result<Option<PathBuf>, TrainError> {
    let dir = out.join(CHECKPOINTS);
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(&dir).map_err(io(&dir))? {
        let entry = entry.map_err(io(&dir))?;
        let name = entry.file_name();
        let Some(n) = name.to_str().and_then(|s| s.strip_prefix("iter_")).and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        if entry.path().join(STATE_FILE).is_file() && best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, entry.path()));
        }
    }
    Ok(best.map(|(_, p)| p))
}

impl Trainer {
    /// Writes the metrics files and a checkpoint for the latest iteration.
    pub(super) fn persist(&mut self, out: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(out).map_err(io(out))?;
        write(&out.join(METRICS_FILE), metrics_csv(&self.reports))?;
        write(&out.join(TIMING_FILE), timing_csv(&self.reports))?;
        let dir = self.save_checkpoint(&out.join(CHECKPOINTS))?;
        self.last_checkpoint = Some(dir.display().to_string());
        Ok(())
    }

    /// Writes a checkpoint of the current state into `root/iter_XXXX` and
    /// returns its path. The directory appears only once complete.
    pub fn save_checkpoint(&self, root: &Path) -> Result<PathBuf, TrainError> {
        let name = checkpoint_dir_name(self.iteration());
        let dir = root.join(&name);
        let tmp = root.join(format!("{name}.partial"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(io(&tmp))?;
        let instance = write_instance(self.spec());
        let spec_hash = spec_digest(self.spec());
        let prov = Provenance { spec_hash: Some(spec_hash.clone()), run_seed: Some(self.config.seed) };
        self.net.save_weights(&tmp.join(NET_FILE), &prov)?;
        write(&tmp.join(REPLAY_FILE), self.buffer.to_json_lines())?;
        write(&tmp.join(INSTANCE_FILE), instance)?;
        let state = SavedState {
            config: self.config.clone(),
            iteration: self.iteration(),
            reports: self.reports.clone(),
            changes: self.changes.clone(),
            pending_change: self.pending_change.clone(),
            parent_checkpoint: self.last_checkpoint.clone(),
            spec_hash,
        };
        write(&tmp.join(STATE_FILE), serde_json::to_string_pretty(&state).expect("state serializes"))?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io(&dir))?;
        }
        fs::rename(&tmp, &dir).map_err(io(&dir))?;
        Ok(dir)
    }
}

/// Restores a trainer from a checkpoint directory. Output goes back to the
/// run directory the checkpoint lives in.
pub(super) fn load(dir: &Path) -> Result<Trainer, TrainError> {
    let bad = |m: String| TrainError::Checkpoint(format!("{}: {m}", dir.display()));
    let state: SavedState =
        serde_json::from_str(&read(&dir.join(STATE_FILE))?).map_err(|e| bad(format!("{STATE_FILE}: {e}")))?;
    if state.reports.len() != state.iteration {
        return Err(bad("report count does not match the iteration".into()));
    }
    state.config.validate()?;
    let spec = parse_instance(&read(&dir.join(INSTANCE_FILE))?).map_err(|e| bad(format!("{INSTANCE_FILE}: {e}")))?;
    if spec_digest(&spec) != state.spec_hash {
        return Err(bad("instance does not match the recorded digest".into()));
    }
    let mdp = TopologyMdp::new(Arc::new(spec), state.config.mdp)?;
    let (net, prov) = PolicyValueNet::load_weights(&dir.join(NET_FILE))?;
    if prov.spec_hash.as_deref().is_some_and(|h| h != state.spec_hash) {
        return Err(bad("weights were saved for a different network".into()));
    }
    let expected = state.config.net.net_config(&mdp, net.config().weight_init_seed);
    if net.config() != &expected {
        return Err(bad("network architecture does not match the configuration".into()));
    }
    let buffer = ReplayBuffer::from_json_lines(&read(&dir.join(REPLAY_FILE))?, state.config.replay_capacity, &mdp)?;
    let baselines = BaselineLifetimes::compute(&mdp, state.config.seed)?;
    let out_dir = dir.parent().and_then(Path::parent).map(Path::to_path_buf);
    Ok(Trainer {
        config: state.config,
        mdp,
        net,
        buffer,
        reports: state.reports,
        changes: state.changes,
        baselines,
        pending_change: state.pending_change,
        out_dir,
        last_checkpoint: Some(dir.display().to_string()),
    })
}
