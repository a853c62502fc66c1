use std::fmt;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{NetworkSpec, NodeId};

/// A sensor placed into a free (inactive) slot of the padded network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewSensor {
    pub node: usize,
    pub x: f64,
    pub y: f64,
    pub energy: f64,
}

/// A change to the set of working sensors between iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkChange {
    /// Disable sensors; their slots keep position and battery.
    Remove(Vec<usize>),
    /// Re-enable previously removed sensors where they were.
    Restore(Vec<usize>),
    /// Put new sensors into inactive slots.
    Add(Vec<NewSensor>),
}

impl fmt::Display for NetworkChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids = |v: &mut dyn Iterator<Item = usize>| v.map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        match self {
            NetworkChange::Remove(v) => write!(f, "remove {}", ids(&mut v.iter().copied())),
            NetworkChange::Restore(v) => write!(f, "restore {}", ids(&mut v.iter().copied())),
            NetworkChange::Add(v) => write!(f, "add {}", ids(&mut v.iter().map(|s| s.node))),
        }
    }
}

/// The network after `change`. Node indices never move, so the action space
/// and the network's input shape stay the same.
pub fn apply_network_change(spec: &NetworkSpec, change: &NetworkChange) -> Result<NetworkSpec, TrainError> {
    let n = spec.node_count();
    let refuse = |m: String| Err(TrainError::Change(m));
    let ids: Vec<usize> = match change {
        NetworkChange::Remove(v) | NetworkChange::Restore(v) => v.clone(),
        NetworkChange::Add(v) => v.iter().map(|s| s.node).collect(),
    };
    if ids.is_empty() {
        return refuse("the change names no sensors".into());
    }
    for (k, &i) in ids.iter().enumerate() {
        if i == 0 {
            return refuse("the gateway cannot be removed, restored or replaced".into());
        }
        if i >= n {
            return refuse(format!(
                "node {i} is beyond the padded capacity of {n} nodes; regenerate the instance with a larger node count and inactive spare slots"
            ));
        }
        if ids[..k].contains(&i) {
            return refuse(format!("node {i} is listed twice"));
        }
    }
    let nodes: Vec<NodeId> = ids.iter().map(|&i| NodeId(i)).collect();
    let next = match change {
        NetworkChange::Remove(_) => {
            if let Some(&i) = ids.iter().find(|&&i| !spec.is_active(NodeId(i))) {
                return refuse(format!("sensor {i} is already inactive"));
            }
            if spec.active_sensor_count() <= ids.len() {
                return refuse("at least one sensor must stay active".into());
            }
            spec.with_active(&nodes, false)?
        }
        NetworkChange::Restore(_) => {
            if let Some(&i) = ids.iter().find(|&&i| spec.is_active(NodeId(i))) {
                return refuse(format!("sensor {i} is already active"));
            }
            spec.with_active(&nodes, true)?
        }
        NetworkChange::Add(sensors) => {
            let mut next = spec.clone();
            for s in sensors {
                if spec.is_active(NodeId(s.node)) {
                    return refuse(format!("slot {} already holds an active sensor", s.node));
                }
                next = next.with_sensor(NodeId(s.node), [s.x, s.y], s.energy)?;
            }
            next
        }
    };
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{MdpOptions, TopologyMdp};
    use crate::testutil::random_spec;
    use std::sync::Arc;

    #[test]
    fn remove_then_restore_is_an_involution() {
        let spec = random_spec(9, 1);
        let removed = apply_network_change(&spec, &NetworkChange::Remove(vec![6, 7, 8])).unwrap();
        assert_eq!(removed.active_sensor_count(), 5);
        let mdp = TopologyMdp::new(Arc::new(removed.clone()), MdpOptions::default()).unwrap();
        assert_eq!(mdp.horizon(), 5);
        let back = apply_network_change(&removed, &NetworkChange::Restore(vec![6, 7, 8])).unwrap();
        assert_eq!(back, spec);
        let m0 = TopologyMdp::new(Arc::new(spec), MdpOptions::default()).unwrap();
        let m1 = TopologyMdp::new(Arc::new(back), MdpOptions::default()).unwrap();
        assert_eq!(m0.initial_state().unwrap().valid_mask(), m1.initial_state().unwrap().valid_mask());
    }

    #[test]
    fn refusals() {
        let spec = random_spec(4, 2);
        let err = |c: NetworkChange| apply_network_change(&spec, &c).unwrap_err().to_string();
        assert!(err(NetworkChange::Remove(vec![0])).contains("gateway"));
        assert!(err(NetworkChange::Remove(vec![1, 2, 3])).contains("at least one"));
        assert!(err(NetworkChange::Add(vec![NewSensor { node: 4, x: 0.0, y: 1.0, energy: 1.0 }])).contains("capacity"));
        assert!(err(NetworkChange::Add(vec![NewSensor { node: 2, x: 0.0, y: 1.0, energy: 1.0 }])).contains("already"));
        assert!(err(NetworkChange::Restore(vec![1])).contains("already active"));
        assert!(err(NetworkChange::Remove(vec![1, 1])).contains("twice"));
    }

    #[test]
    fn add_fills_an_inactive_slot() {
        let spec = random_spec(5, 3).with_active(&[NodeId(4)], false).unwrap();
        let s = NewSensor { node: 4, x: 10.0, y: -20.0, energy: 0.75 };
        let next = apply_network_change(&spec, &NetworkChange::Add(vec![s])).unwrap();
        assert!(next.is_active(NodeId(4)));
        assert_eq!(next.position(NodeId(4)), [10.0, -20.0]);
        assert_eq!(next.initial_energy(NodeId(4)), 0.75);
        assert_eq!(NetworkChange::Add(vec![s]).to_string(), "add 4");
        assert_eq!(NetworkChange::Remove(vec![6, 7]).to_string(), "remove 6 7");
    }
}
