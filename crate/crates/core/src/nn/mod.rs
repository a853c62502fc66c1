//! Policy/value network: a residual convolutional trunk with a masked policy
//! head over the `N²` attach actions and an unbounded scalar value head.
//!
//! Everything is `f64`, and backpropagation is written by hand.

mod adam;
mod checkpoint;
mod net;
pub mod ops;

pub use adam::Adam;
pub use checkpoint::{Provenance, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{PolicyValueNet, Segment};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::TopologyMdp;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("{what} has length {got}, expected {expected}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("non-finite gradient in layer {segment}")]
    NonFiniteGradient { segment: String },
    #[error("non-finite parameter in layer {segment} after update")]
    NonFiniteParameter { segment: String },
    #[error("non-finite network output")]
    NonFiniteOutput,
    #[error("not a network checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated or has trailing bytes")]
    Truncated,
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint does not match: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture and initialization of a [`PolicyValueNet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Input planes `C`.
    pub channels: usize,
    /// Node count `N`; inputs are `C×N×N` and the policy head has `N²` outputs.
    pub board: usize,
    /// Residual blocks after the input convolution.
    pub conv_blocks: usize,
    pub filters: usize,
    pub kernel: usize,
    pub use_residual: bool,
    pub use_batchnorm: bool,
    pub value_head_hidden: usize,
    pub weight_init_seed: u64,
    /// L2 coefficient in the loss.
    pub l2: f64,
    /// Weight of the old running statistic in batchnorm's moving averages.
    pub bn_momentum: f64,
}

impl NetConfig {
    /// Default small architecture for `channels × board × board` inputs.
    pub fn new(channels: usize, board: usize, weight_init_seed: u64) -> Self {
        Self {
            channels,
            board,
            conv_blocks: 3,
            filters: 32,
            kernel: 3,
            use_residual: true,
            use_batchnorm: true,
            value_head_hidden: 64,
            weight_init_seed,
            l2: 1e-4,
            bn_momentum: 0.9,
        }
    }

    pub fn for_mdp(mdp: &TopologyMdp, weight_init_seed: u64) -> Self {
        Self::new(mdp.channels(), mdp.node_count(), weight_init_seed)
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.board, self.board)
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.board * self.board
    }

    pub fn policy_head_dim(&self) -> usize {
        self.board * self.board
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Config(m.to_string()));
        if self.channels == 0 || self.board == 0 || self.filters == 0 || self.value_head_hidden == 0 {
            return bad("channels, board, filters and value_head_hidden must be positive");
        }
        if self.conv_blocks == 0 {
            return bad("conv_blocks must be at least 1");
        }
        if self.kernel.is_multiple_of(2) {
            return bad("kernel size must be odd");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One training example: a state, its search policy and the episode outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSample {
    pub encoded_state: Vec<f64>,
    pub valid_mask: Vec<bool>,
    /// Normalized visit counts; zero on invalid actions.
    pub target_policy: Vec<f64>,
    pub target_value: f64,
}
