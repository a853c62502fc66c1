//! Energy-efficient tree topologies for wireless sensor networks, learned by
//! alternating Monte Carlo tree search with a policy/value network.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: node geometry, per-round loads and energy, network lifetime.
//! * [`mdp`]: tree construction as a sequence of attach actions.
//! * [`baselines`]: star, random and MST trees plus an exhaustive oracle.
//! * [`nn`]: a small residual conv net with hand-written backprop and Adam.
//! * [`mcts`]: prior-guided UCB tree search that produces visit-count targets.
//! * [`trainer`]: the search/train loop, evaluation and network changes.
//! * [`harness`]: instance generation, experiment configs and artifacts.

pub mod baselines;
pub mod harness;
pub mod mcts;
pub mod mdp;
pub mod model;
pub mod nn;
pub mod seed;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testutil;
