//! Intrinsically motivated reinforcement learning built around one idea:
//! reward the agent for the mutual information between its own state and the
//! surrounding state it can influence.
//!
//! The crate bundles a small dense-network engine ([`nn`]), a neural MI lower
//! bound with per-transition rewards ([`mi`]), 2D contact environments with
//! an agent/surrounding observation split ([`env`]), a trajectory replay
//! buffer with MI-based prioritization ([`replay`]), a goal-conditioned
//! deterministic actor-critic ([`agent`]), reward composition including
//! skill-discriminator and action-information baselines ([`intrinsic`]), and
//! the training orchestration behind the `music` command-line tool
//! ([`trainer`]).

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod intrinsic;
pub mod metrics;
pub mod mi;
pub mod nn;
pub mod replay;
pub mod trainer;

pub use error::{Error, Result};
