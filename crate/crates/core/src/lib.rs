//! Learnable graph-based physics engine.
//!
//! A typed message-passing network whose pairwise messages are antisymmetric
//! (`m_ji = −m_ij`), so predicted internal forces conserve momentum and only
//! one message is evaluated per interacting pair. The crate also contains the
//! numeric kernel it trains with, radius and multi-scale graph builders,
//! reference simulators producing ground-truth trajectories, and the training
//! and rollout loops.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod graph;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod rollout;
pub mod sims;
pub mod state;
pub mod tape;
pub mod tensor;
pub mod training;
pub mod trajectory;

pub use error::{GpeError, Result};
