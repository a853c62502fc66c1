use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wsntopo::baselines::brute_force_optimal;
use wsntopo::harness::{
    compute_baselines, evaluate_checkpoint, load_instance, parse_remove_arg, parse_restore_arg, resume_experiment,
    run_experiment, ExperimentConfig, GeneratorParams, HarnessError, InstanceSource, BASELINES_HEADER,
};
use wsntopo::model::{write_instance, write_topology_file, AggregationMode};
use wsntopo::trainer::{EvalMode, TrainConfig};

#[derive(Parser)]
#[command(name = "wsntopo", version, about = "Learn long-lived sensor network trees with MCTS and a policy/value net")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance on a disc.
    Gen {
        #[command(flatten)]
        generator: GenArgs,
        /// Output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Star, random and MST lifetimes, optionally with the exact optimum.
    Baseline {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Exhaustive search over every spanning tree (at most 9 active nodes).
    Oracle {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = Aggregation::Subtree)]
        aggregation: Aggregation,
        /// Write the best tree as a topology file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment: baselines, training and scripted network changes.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Evaluate a checkpoint's network without search.
    Eval {
        /// Checkpoint directory (`<run>/checkpoints/iter_XXXX`).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "eval-count", default_value_t = 100)]
        eval_count: usize,
        /// Take the most probable action instead of sampling.
        #[arg(long)]
        greedy: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the best tree as a topology file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue a run from its latest checkpoint.
    Resume {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregation {
    Subtree,
    Literal,
}

impl From<Aggregation> for AggregationMode {
    fn from(a: Aggregation) -> Self {
        match a {
            Aggregation::Subtree => AggregationMode::Subtree,
            Aggregation::Literal => AggregationMode::Literal,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 1000.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trailing node slots left inactive for later additions.
    #[arg(long, default_value_t = 0)]
    spare: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Instance file instead of a generated instance.
    #[arg(long, conflicts_with_all = ["nodes", "radius", "spare"])]
    instance: Option<PathBuf>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    spare: Option<usize>,
    /// Run seed; also seeds the generated instance unless --instance-seed is given.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    instance_seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Episodes per iteration.
    #[arg(long)]
    episodes: Option<usize>,
    /// Simulations per visited state.
    #[arg(long)]
    sims: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    cpuct: Option<f64>,
    /// Trees sampled from the network per evaluation.
    #[arg(long = "eval-count")]
    eval_count: Option<usize>,
    #[arg(long)]
    conv_blocks: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    value_hidden: Option<usize>,
    #[arg(long, value_enum)]
    aggregation: Option<Aggregation>,
    /// Remove sensors before an iteration, e.g. `63:6,7,8`. Repeatable.
    #[arg(long = "remove", value_name = "AT:IDS")]
    remove: Vec<String>,
    /// Re-enable removed sensors before an iteration. Repeatable.
    #[arg(long = "restore", value_name = "AT:IDS")]
    restore: Vec<String>,
    /// Include the exhaustive optimum in the baselines.
    #[arg(long)]
    oracle: bool,
    /// Start from the full-size settings (10 episodes, 100 simulations, learning rate 1e-6).
    #[arg(long)]
    full_scale: bool,
    /// Unbounded replay, fresh search tree per move, adjacency-only input.
    #[arg(long)]
    plain: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn build(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut c = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| HarnessError::Io { path: p.clone(), source })?;
                ExperimentConfig::from_toml_str(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if self.full_scale {
            c.train = TrainConfig { seed: c.train.seed, iterations: c.train.iterations, ..TrainConfig::full_scale() };
        }
        if self.plain {
            c.train = c.train.plain();
        }
        if let Some(p) = &self.instance {
            c.instance = InstanceSource::File(p.clone());
        }
        if let InstanceSource::Generate(g) = &mut c.instance {
            let GeneratorParams { nodes, radius, spare, seed, .. } = g;
            set(nodes, self.nodes);
            set(radius, self.radius);
            set(spare, self.spare);
            set(seed, self.instance_seed.or(self.seed));
        }
        let t = &mut c.train;
        set(&mut t.seed, self.seed);
        set(&mut t.iterations, self.iterations);
        set(&mut t.episodes_per_iter, self.episodes);
        set(&mut t.sims_per_state, self.sims);
        set(&mut t.minibatch, self.batch);
        set(&mut t.learning_rate, self.lr);
        set(&mut t.c_puct, self.cpuct);
        set(&mut t.eval_realizations, self.eval_count);
        set(&mut t.net.conv_blocks, self.conv_blocks);
        set(&mut t.net.filters, self.filters);
        set(&mut t.net.value_head_hidden, self.value_hidden);
        set(&mut t.mdp.aggregation, self.aggregation.map(Into::into));
        if self.oracle {
            c.oracle = true;
        }
        for r in &self.remove {
            c.changes.push(parse_remove_arg(r)?);
        }
        for r in &self.restore {
            c.changes.push(parse_restore_arg(r)?);
        }
        c.changes.sort_by_key(|e| e.at);
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        Ok(c)
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|source| HarnessError::Io { path: p.to_path_buf(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Gen { generator: g, out } => {
            let spec = GeneratorParams { spare: g.spare, ..GeneratorParams::new(g.nodes, g.radius, g.seed) }.generate()?;
            write_or_print(out.as_deref(), &write_instance(&spec))
        }
        Command::Baseline { exp } => {
            let c = exp.build()?;
            let rows = if exp.out.is_some() {
                run_experiment(&ExperimentConfig { training: false, changes: Vec::new(), baselines: true, ..c })?.baselines
            } else {
                let spec = c.instance.load()?;
                c.validate()?;
                compute_baselines(&spec, c.train.mdp.aggregation, c.train.seed, c.oracle)?.0
            };
            println!("{BASELINES_HEADER}");
            for r in rows {
                println!("{},{},{}", r.method, r.lifetime, r.continuous);
            }
            Ok(())
        }
        Command::Oracle { instance, aggregation, out } => {
            let spec = load_instance(&instance)?;
            let r = brute_force_optimal(&spec, aggregation.into())?;
            println!("trees {}", r.tree_count);
            println!("lifetime {} ({})", r.best_lifetime.rounds, r.best_lifetime.continuous);
            if let Some(p) = out {
                write_or_print(Some(&p), &write_topology_file(&spec, &r.best_topology))?;
            }
            Ok(())
        }
        Command::Train { exp } => {
            let c = exp.build()?;
            let o = run_experiment(&c)?;
            if let Some(last) = o.reports.last() {
                println!(
                    "iteration {}: mean {} std {} best {} greedy {} (mst {})",
                    last.iteration,
                    last.mean_lifetime,
                    last.std_lifetime,
                    last.best_lifetime,
                    last.greedy_lifetime,
                    last.baselines.mst
                );
            }
            println!("artifacts in {}", c.out.display());
            Ok(())
        }
        Command::Eval { checkpoint, eval_count, greedy, seed, out } => {
            let mode = if greedy { EvalMode::Greedy } else { EvalMode::Sample };
            let (spec, ev) = evaluate_checkpoint(&checkpoint, eval_count, mode, seed)?;
            println!("trees {} mean {} std {} best {}", ev.lifetimes.len(), ev.mean, ev.std, ev.best);
            if let Some(p) = out {
                write_or_print(Some(&p), &write_topology_file(&spec, &ev.topologies[ev.best_index]))?;
            }
            Ok(())
        }
        Command::Resume { out } => {
            let o = resume_experiment(&out)?;
            println!("completed {} iterations", o.reports.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
