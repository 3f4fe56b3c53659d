//! The environment interface shared by discovery, transfer and baselines,
//! and the trajectory record they exchange.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::param_space::{TaskParamSpec, TaskParams};

/// Outcome of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Horizon reached.
    pub done: bool,
    /// The action the environment actually executed (after clipping, or
    /// zeros for environments whose dynamics ignore actions).
    pub applied_action: Vec<f64>,
}

/// A parameterized task family `M(w)`.
pub trait Environment {
    fn param_spec(&self) -> &TaskParamSpec;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Per-component action bound.
    fn max_action(&self) -> f64;
    fn horizon(&self) -> usize;
    /// Instantiates `M(w)` and returns the initial observation.
    fn reset(&mut self, params: &TaskParams, seed: u64) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<EnvStep>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
}

/// One episode `τ` together with the skill and task that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub skill: usize,
    pub params: TaskParams,
    pub seed: u64,
    pub initial_obs: Vec<f64>,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn new(skill: usize, params: TaskParams, seed: u64, initial_obs: Vec<f64>) -> Self {
        Trajectory {
            skill,
            params,
            seed,
            initial_obs,
            transitions: Vec::new(),
        }
    }

    /// Appends a step, chaining from the last observation.
    pub fn push(&mut self, action: Vec<f64>, reward: f64, next_obs: Vec<f64>) {
        let obs = self.last_obs().to_vec();
        self.transitions.push(Transition {
            obs,
            action,
            reward,
            next_obs,
        });
    }

    pub fn last_obs(&self) -> &[f64] {
        self.transitions
            .last()
            .map(|t| t.next_obs.as_slice())
            .unwrap_or(&self.initial_obs)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Every `next_obs` equals the following transition's `obs`.
    pub fn is_chained(&self) -> bool {
        let mut prev = self.initial_obs.as_slice();
        for t in &self.transitions {
            if t.obs != prev {
                return false;
            }
            prev = &t.next_obs;
        }
        true
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.reward)
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.rewards().sum()
    }

    /// `Σ_t γ^t r_t` with `t` counted from zero.
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.transitions
            .iter()
            .rev()
            .fold(0.0, |acc, t| t.reward + gamma * acc)
    }
}

/// Runs one episode, choosing actions with `policy(obs)`.
pub fn rollout<E: Environment + ?Sized>(
    env: &mut E,
    skill: usize,
    params: &TaskParams,
    seed: u64,
    mut policy: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<Trajectory> {
    let obs = env.reset(params, seed)?;
    let mut traj = Trajectory::new(skill, params.clone(), seed, obs);
    loop {
        let action = policy(traj.last_obs())?;
        let step = env.step(&action)?;
        traj.push(step.applied_action, step.reward, step.observation);
        if step.done {
            return Ok(traj);
        }
    }
}
