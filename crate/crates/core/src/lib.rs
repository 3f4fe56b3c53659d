//! Skill discovery by learning which tasks to generate for each skill.
//!
//! A task generator proposes parameters `w` of a task family for each
//! skill `z`, a skill-conditioned SAC policy acts in the resulting task,
//! and a trajectory discriminator `q(z | τ)` rewards the generator for
//! tasks that make skills distinguishable. Discovered skills are reused
//! by a deep-Q high-level policy on a held-out target task.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod discovery;
pub mod discriminator;
pub mod env;
pub mod error;
pub mod generator;
pub mod hrl;
pub mod nn;
pub mod param_space;
pub mod pushworld;
pub mod seed;
pub mod skill_policy;
pub mod toy;

pub use error::{Result, SlideError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
