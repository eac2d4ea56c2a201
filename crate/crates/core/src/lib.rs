//! Hyperbolic latent-space search and reward shaping for multi-turn policies.
//!
//! Pooled hidden states are mapped into the Poincaré ball around the root
//! state. Geodesic distances drive a dense potential-based step reward, a
//! value-guided MCTS with latent-space pruning, and a group-relative policy
//! objective trained on the resulting trees.

pub mod bandit;
pub mod cli;
pub mod config;
pub mod env;
pub mod geometry;
pub mod grpo;
pub mod mcts;
pub mod persist;
pub mod shaping;
pub mod tree;
pub mod value_head;

pub use geometry::{AmbientVector, BallPoint, GeoConfig, GeoError};
pub use mcts::{run_search, SearchConfig, SearchError};
pub use shaping::{shape_tree, RewardScheme, Shaping};
pub use tree::{NodeId, SearchTree};
pub use value_head::{ValueHead, ValueModel};
