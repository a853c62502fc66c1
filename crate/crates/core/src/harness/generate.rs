use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{EnergyParams, ModelError, NetworkSpec, NodeSpec};
use crate::seed::derive_seed;

/// Random instance on a disc: gateway at the centre, sensors uniform over the area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    /// Total node count including the gateway.
    pub nodes: usize,
    /// Disc radius in metres.
    pub radius: f64,
    pub seed: u64,
    /// Initial battery of every sensor, joules.
    pub energy: f64,
    /// Trailing slots generated inactive, to be filled by later additions.
    pub spare: usize,
    pub params: EnergyParams,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self { nodes: 20, radius: 1000.0, seed: 0, energy: 1.0, spare: 0, params: EnergyParams::default() }
    }
}

impl GeneratorParams {
    pub fn new(nodes: usize, radius: f64, seed: u64) -> Self {
        Self { nodes, radius, seed, ..Self::default() }
    }

    pub fn generate(&self) -> Result<NetworkSpec, ModelError> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(ModelError::InvalidParams(format!("radius must be positive, got {}", self.radius)));
        }
        if self.spare + 1 >= self.nodes {
            return Err(ModelError::InvalidParams(format!(
                "{} spare slots leave no active sensor among {} nodes",
                self.spare, self.nodes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "instance", &[]));
        let mut nodes = vec![NodeSpec::gateway(0.0, 0.0)];
        for i in 1..self.nodes {
            let [x, y] = sample_disc(&mut rng, self.radius);
            let mut s = NodeSpec::sensor(x, y, self.energy);
            s.active = i < self.nodes - self.spare;
            nodes.push(s);
        }
        NetworkSpec::new(nodes, self.params)
    }
}

/// Uniform point in a disc of radius `r` (radius drawn as `r·√u`).
pub fn sample_disc(rng: &mut impl Rng, r: f64) -> [f64; 2] {
    let rho = r * rng.random::<f64>().sqrt();
    let theta = TAU * rng.random::<f64>();
    [rho * theta.cos(), rho * theta.sin()]
}

/// `n` nodes on a disc of radius `radius_m` with default constants and 1 J batteries.
pub fn generate_instance(n: usize, radius_m: f64, seed: u64) -> Result<NetworkSpec, ModelError> {
    GeneratorParams::new(n, radius_m, seed).generate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{write_instance, NodeId};

    #[test]
    fn default_instance_shape() {
        let spec = generate_instance(20, 1000.0, 3).unwrap();
        assert_eq!(spec.node_count(), 20);
        assert_eq!(spec.active_sensor_count(), 19);
        assert_eq!(spec.position(NodeId(0)), [0.0, 0.0]);
        assert_eq!(spec.params(), &EnergyParams { rho: 1e-12, eps_proc: 50e-9, data_bits_min: 500, data_bits_max: 1000 });
        for i in 1..20 {
            let [x, y] = spec.position(NodeId(i));
            assert!(x.hypot(y) <= 1000.0);
            assert_eq!(spec.initial_energy(NodeId(i)), 1.0);
        }
        assert_eq!(write_instance(&spec), write_instance(&generate_instance(20, 1000.0, 3).unwrap()));
        assert_ne!(spec, generate_instance(20, 1000.0, 4).unwrap());
    }

    #[test]
    fn placement_is_uniform_over_area() {
        let spec = generate_instance(10_001, 1000.0, 8).unwrap();
        let inner = (1..spec.node_count())
            .filter(|&i| {
                let [x, y] = spec.position(NodeId(i));
                x.hypot(y) < 1000.0 / 2f64.sqrt()
            })
            .count();
        let frac = inner as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "inner fraction {frac}");
    }

    #[test]
    fn spare_slots_are_inactive() {
        let spec = GeneratorParams { spare: 3, ..GeneratorParams::new(10, 500.0, 1) }.generate().unwrap();
        assert_eq!(spec.active_sensor_count(), 6);
        assert!(!spec.is_active(NodeId(9)) && spec.is_active(NodeId(6)));
        assert!(GeneratorParams { spare: 9, ..GeneratorParams::new(10, 500.0, 1) }.generate().is_err());
        assert!(generate_instance(5, 0.0, 1).is_err());
        assert!(generate_instance(1, 10.0, 1).is_err());
    }
}
