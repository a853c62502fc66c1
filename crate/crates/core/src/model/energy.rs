//! Per-round data loads, energy draw and network lifetime.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, NetworkSpec, NodeId, Topology};

/// How a sensor's outgoing load is formed from its children.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    /// `g_i = R_i + Σ_children g_j`: every sensor forwards its whole subtree.
    #[default]
    Subtree,
    /// `g_i = R_i + Σ_children R_j`: only direct children's own data is forwarded.
    Literal,
}

/// Bits each node transmits per round. Entry 0 holds the load received by the gateway.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadVector(pub Vec<f64>);

/// Joules each node spends per round. Entry 0 is always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyVector(pub Vec<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lifetime {
    /// Whole rounds survived by the weakest sensor.
    pub rounds: u64,
    /// `min_i E_i / e_i` before flooring.
    pub continuous: f64,
}

/// Reusable scratch space for evaluating many topologies on one network.
#[derive(Clone, Debug, Default)]
pub struct LifetimeEvaluator {
    depth: Vec<usize>,
    order: Vec<usize>,
    loads: Vec<f64>,
    data: Vec<f64>,
    bucket_start: Vec<usize>,
}

impl LifetimeEvaluator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Active sensors sorted deepest first. The topology must already be valid.
    fn order_by_depth(&mut self, spec: &NetworkSpec, topology: &Topology) {
        let n = spec.node_count();
        self.depth.clear();
        self.depth.resize(n, usize::MAX);
        self.depth[0] = 0;
        let mut max_depth = 0;
        for start in spec.active_sensors().map(NodeId::index) {
            let mut cur = start;
            let mut hops = 0;
            while self.depth[cur] == usize::MAX {
                cur = topology.parents()[cur].expect("validated topology").0;
                hops += 1;
            }
            let mut d = self.depth[cur] + hops;
            max_depth = max_depth.max(d);
            cur = start;
            while self.depth[cur] == usize::MAX {
                self.depth[cur] = d;
                d -= 1;
                cur = topology.parents()[cur].expect("validated topology").0;
            }
        }
        // counting sort, deepest first
        self.bucket_start.clear();
        self.bucket_start.resize(max_depth + 2, 0);
        for i in spec.active_sensors().map(NodeId::index) {
            self.bucket_start[max_depth - self.depth[i] + 1] += 1;
        }
        for b in 1..self.bucket_start.len() {
            self.bucket_start[b] += self.bucket_start[b - 1];
        }
        self.order.clear();
        self.order.resize(spec.active_sensor_count(), 0);
        for i in spec.active_sensors().map(NodeId::index) {
            let slot = &mut self.bucket_start[max_depth - self.depth[i]];
            self.order[*slot] = i;
            *slot += 1;
        }
    }

    fn fill_loads(&mut self, topology: &Topology, mode: AggregationMode) {
        let parents = topology.parents();
        self.loads.clear();
        self.loads.resize(parents.len(), 0.0);
        for &i in &self.order {
            self.loads[i] = self.data[i];
        }
        match mode {
            AggregationMode::Subtree => {
                for &i in &self.order {
                    let p = parents[i].expect("validated topology").0;
                    self.loads[p] += self.loads[i];
                }
            }
            AggregationMode::Literal => {
                for &i in &self.order {
                    let p = parents[i].expect("validated topology").0;
                    if p != 0 {
                        self.loads[p] += self.data[i];
                    }
                }
                let received: f64 = self
                    .order
                    .iter()
                    .filter(|&&i| parents[i] == Some(NodeId::GATEWAY))
                    .map(|&i| self.loads[i])
                    .sum();
                self.loads[0] = received;
            }
        }
    }

    /// Lifetime with every sensor generating the mean data size; skips validation.
    pub fn evaluate_unchecked(
        &mut self,
        spec: &NetworkSpec,
        topology: &Topology,
        mode: AggregationMode,
    ) -> Result<Lifetime, ModelError> {
        self.order_by_depth(spec, topology);
        let mean = spec.params().mean_data_bits();
        self.data.clear();
        self.data.resize(spec.node_count(), 0.0);
        for &i in &self.order {
            self.data[i] = mean;
        }
        self.fill_loads(topology, mode);
        let mut best: Option<Lifetime> = None;
        for &i in &self.order {
            let coeff = per_bit_cost(spec, topology, NodeId(i));
            let g = self.loads[i];
            let e = coeff * g;
            if e <= 0.0 {
                continue;
            }
            let battery = spec.initial_energy(NodeId(i));
            let lt = Lifetime { rounds: whole_rounds(battery, coeff, g), continuous: battery / e };
            best = Some(match best {
                Some(b) => Lifetime {
                    rounds: b.rounds.min(lt.rounds),
                    continuous: b.continuous.min(lt.continuous),
                },
                None => lt,
            });
        }
        best.ok_or(ModelError::UnboundedLifetime)
    }

    pub fn evaluate(
        &mut self,
        spec: &NetworkSpec,
        topology: &Topology,
        mode: AggregationMode,
    ) -> Result<Lifetime, ModelError> {
        topology.validate(spec)?;
        self.evaluate_unchecked(spec, topology, mode)
    }
}

/// `ε^P + ρ·d²` for the link from `node` to its parent.
#[inline]
fn per_bit_cost(spec: &NetworkSpec, topology: &Topology, node: NodeId) -> f64 {
    let parent = topology.parent(node).expect("validated topology");
    let d = spec.distance(node, parent);
    spec.eps_proc(node) + spec.params().rho * (d * d)
}

/// Largest `k` with `coeff·(g·k) <= battery`, i.e. `⌊battery / (coeff·g)⌋`
/// evaluated the same way the round-by-round simulation accumulates energy.
fn whole_rounds(battery: f64, coeff: f64, g: f64) -> u64 {
    let guess = (battery / (coeff * g)).floor();
    if guess >= u64::MAX as f64 {
        return u64::MAX;
    }
    let mut k = guess.max(0.0) as u64;
    while coeff * (g * (k + 1) as f64) <= battery {
        k += 1;
    }
    while k > 0 && coeff * (g * k as f64) > battery {
        k -= 1;
    }
    k
}

/// Per-round loads for the given per-node data sizes (entries for the gateway
/// and inactive nodes are ignored).
pub fn compute_loads(
    spec: &NetworkSpec,
    topology: &Topology,
    data_bits: &[f64],
    mode: AggregationMode,
) -> Result<LoadVector, ModelError> {
    topology.validate(spec)?;
    if data_bits.len() != spec.node_count() {
        return Err(ModelError::DataLength { expected: spec.node_count(), got: data_bits.len() });
    }
    let mut ev = LifetimeEvaluator::new();
    ev.order_by_depth(spec, topology);
    ev.data = data_bits.to_vec();
    ev.fill_loads(topology, mode);
    Ok(LoadVector(ev.loads))
}

/// `e_i = (ε^P + ρ·d(i, parent)²)·g_i` for every active sensor.
pub fn compute_round_energy(spec: &NetworkSpec, topology: &Topology, loads: &LoadVector) -> EnergyVector {
    let mut e = vec![0.0; spec.node_count()];
    for s in spec.active_sensors() {
        e[s.0] = per_bit_cost(spec, topology, s) * loads.0[s.0];
    }
    EnergyVector(e)
}

/// Lifetime with every sensor generating the mean data size each round.
pub fn lifetime_deterministic(
    spec: &NetworkSpec,
    topology: &Topology,
    mode: AggregationMode,
) -> Result<Lifetime, ModelError> {
    LifetimeEvaluator::new().evaluate(spec, topology, mode)
}

/// Simulates rounds with uniformly drawn data sizes and returns the number of
/// rounds completed before any battery would go negative.
pub fn lifetime_stochastic(
    spec: &NetworkSpec,
    topology: &Topology,
    mode: AggregationMode,
    seed: u64,
) -> Result<u64, ModelError> {
    topology.validate(spec)?;
    let mut ev = LifetimeEvaluator::new();
    ev.order_by_depth(spec, topology);
    let sensors: Vec<usize> = spec.active_sensors().map(NodeId::index).collect();
    let coeff: Vec<f64> = sensors.iter().map(|&i| per_bit_cost(spec, topology, NodeId(i))).collect();
    if coeff.iter().all(|&c| c <= 0.0) {
        return Err(ModelError::UnboundedLifetime);
    }
    let battery: Vec<f64> = sensors.iter().map(|&i| spec.initial_energy(NodeId(i))).collect();
    let (lo, hi) = (spec.params().data_bits_min, spec.params().data_bits_max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // cumulative transmitted bits; integer-valued, so exact in f64
    let mut sent = vec![0.0; sensors.len()];
    ev.data = vec![0.0; spec.node_count()];
    let mut rounds = 0u64;
    loop {
        for &i in &sensors {
            ev.data[i] = f64::from(rng.random_range(lo..=hi));
        }
        ev.fill_loads(topology, mode);
        let mut alive = true;
        for (k, &i) in sensors.iter().enumerate() {
            sent[k] += ev.loads[i];
            if coeff[k] * sent[k] > battery[k] {
                alive = false;
            }
        }
        if !alive {
            return Ok(rounds);
        }
        rounds += 1;
    }
}
