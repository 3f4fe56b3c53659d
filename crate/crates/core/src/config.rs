//! Run configuration. Every field is required and unknown keys are
//! rejected, so a config file fully describes a run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorConfig;
use crate::env::Environment;
use crate::error::{Result, SlideError};
use crate::generator::GeneratorConfig;
use crate::pushworld::PushWorld;
use crate::skill_policy::SacConfig;
use crate::toy::{ModeWorld, ModeWorldConfig};

/// The shipped defaults.
pub const DEFAULT_TOML: &str = include_str!("../../../configs/default.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Learned task generator with the diversity and feasibility terms.
    Slide,
    /// Tasks drawn from the uniform sampler; no generator.
    UniformTasks,
    /// Uniform tasks, skills rewarded by a next-state classifier.
    NextStateDiscriminator,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Slide => "slide",
            Method::UniformTasks => "uniform_tasks",
            Method::NextStateDiscriminator => "next_state_discriminator",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorldConfig {
    PushWorld { horizon: usize },
    ModeWorld { modes: usize, horizon: usize, point_mass: bool },
}

impl WorldConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match *self {
            WorldConfig::PushWorld { horizon } => Box::new(PushWorld::with_horizon(horizon)?),
            WorldConfig::ModeWorld { modes, horizon, point_mass } => {
                Box::new(ModeWorld::new(ModeWorldConfig { modes, horizon, point_mass })?)
            }
        })
    }

    pub fn horizon(&self) -> usize {
        match *self {
            WorldConfig::PushWorld { horizon } | WorldConfig::ModeWorld { horizon, .. } => horizon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub method: Method,
    pub num_skills: usize,
    pub iterations: u64,
    pub gamma: f64,
    /// Target intra-skill diversity `H̄`.
    pub target_entropy: f64,
    pub initial_alpha: f64,
    pub alpha_lr: f64,
    /// Iterations per metrics row.
    pub eval_every: u64,
    /// Iterations per resumable checkpoint; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Metrics rows without MI-bound improvement before stopping; 0 disables.
    pub early_stop_patience: u64,
    pub early_stop_min_delta: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            method: Method::Slide,
            num_skills: 64,
            iterations: 500_000,
            gamma: 0.99,
            target_entropy: 3.0,
            initial_alpha: 1.0,
            alpha_lr: 1e-3,
            eval_every: 1000,
            checkpoint_every: 10_000,
            early_stop_patience: 0,
            early_stop_min_delta: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    QLearning,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_update_every: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the step budget over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: 64,
            lr: 3e-4,
            batch_size: 128,
            replay_capacity: 100_000,
            target_update_every: 1000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Low-level steps each selected skill is held for.
    pub hold_steps: usize,
    pub finetune: bool,
    pub selector: Selector,
    pub gamma: f64,
    /// The held-out target task `w̄`.
    pub target_params: Vec<f64>,
    pub dqn: DqnConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub world: WorldConfig,
    pub discovery: DiscoveryConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub sac: SacConfig,
    pub transfer: TransferConfig,
}

fn field_from_message(msg: &str) -> Option<String> {
    for marker in ["missing field `", "unknown field `", "unknown variant `"] {
        if let Some(start) = msg.find(marker) {
            let rest = &msg[start + marker.len()..];
            return rest.find('`').map(|end| rest[..end].to_string());
        }
    }
    None
}

impl Config {
    pub fn default_config() -> Config {
        Config::parse(DEFAULT_TOML).expect("shipped default config parses")
    }

    pub fn parse(text: &str) -> Result<Config> {
        let config: Config = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            SlideError::config(field_from_message(&msg).unwrap_or_else(|| "<config>".into()), msg)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.discovery;
        if d.num_skills == 0 {
            return Err(SlideError::config("num_skills", "must be at least 1"));
        }
        if !(d.gamma > 0.0 && d.gamma <= 1.0) {
            return Err(SlideError::config("gamma", "must be in (0, 1]"));
        }
        if !d.target_entropy.is_finite() {
            return Err(SlideError::config("target_entropy", "must be finite"));
        }
        if !(d.initial_alpha > 0.0) || !d.initial_alpha.is_finite() {
            return Err(SlideError::config("initial_alpha", "must be positive"));
        }
        if !(d.alpha_lr >= 0.0) {
            return Err(SlideError::config("alpha_lr", "must be non-negative"));
        }
        if d.eval_every == 0 {
            return Err(SlideError::config("eval_every", "must be positive"));
        }
        if self.generator.batch_size == 0 {
            return Err(SlideError::config("generator.batch_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.generator.baseline_decay) {
            return Err(SlideError::config("generator.baseline_decay", "must be in [0, 1)"));
        }
        if self.discriminator.batch_size == 0 || self.discriminator.buffer_capacity == 0 {
            return Err(SlideError::config("discriminator.batch_size", "batch and buffer must be positive"));
        }
        self.sac.validate()?;
        let t = &self.transfer;
        if t.eval_every == 0 || t.eval_episodes == 0 || t.hold_steps == 0 {
            return Err(SlideError::config("transfer.eval_every", "eval_every, eval_episodes and hold_steps must be positive"));
        }
        if !(t.gamma > 0.0 && t.gamma <= 1.0) {
            return Err(SlideError::config("transfer.gamma", "must be in (0, 1]"));
        }
        let q = &t.dqn;
        if q.batch_size == 0 || q.replay_capacity < q.batch_size || q.target_update_every == 0 {
            return Err(SlideError::config("transfer.dqn.batch_size", "batch, replay and target period must be positive"));
        }
        if !(0.0..=1.0).contains(&q.epsilon_end) || !(q.epsilon_end..=1.0).contains(&q.epsilon_start) {
            return Err(SlideError::config("transfer.dqn.epsilon_start", "need 0 ≤ epsilon_end ≤ epsilon_start ≤ 1"));
        }
        if !(0.0..=1.0).contains(&q.epsilon_decay_fraction) {
            return Err(SlideError::config("transfer.dqn.epsilon_decay_fraction", "must be in [0, 1]"));
        }
        let env = self.world.build()?;
        crate::param_space::TaskParams::new(t.target_params.clone())
            .validate(env.param_spec())
            .map_err(|e| SlideError::config("transfer.target_params", e.to_string()))?;
        Ok(())
    }
}

/// Serde adapter storing a value as TOML text, for binary formats that
/// cannot represent tagged enums.
pub mod toml_string {
    use serde::de::{DeserializeOwned, Error as _};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize, S: Serializer>(value: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
        toml::to_string(value).map_err(serde::ser::Error::custom)?.serialize(s)
    }

    pub fn deserialize<'de, T: DeserializeOwned, D: Deserializer<'de>>(d: D) -> std::result::Result<T, D::Error> {
        toml::from_str(&String::deserialize(d)?).map_err(D::Error::custom)
    }
}
