//! ModeWorld: a tiny task family whose trajectories can be enumerated.
//!
//! The only task parameter is a discrete `mode`. The observation is
//! `[one-hot(mode), x, y, t / T]`. With `point_mass` off the point never
//! moves and actions are recorded as zeros, so each mode yields exactly
//! one deterministic trajectory and `I(τ; z)` reduces to `I(mode; z)`,
//! computable by enumeration. With `point_mass` on, actions move the point
//! inside `[-1, 1]²`, which gives state-reaching skills something to do.

use serde::{Deserialize, Serialize};

use crate::env::{EnvStep, Environment};
use crate::error::{Result, SlideError};
use crate::param_space::{FactorizedDistribution, ParamSpec, TaskParamSpec, TaskParams};

pub const MAX_ACTION: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeWorldConfig {
    pub modes: usize,
    pub horizon: usize,
    pub point_mass: bool,
}

impl Default for ModeWorldConfig {
    fn default() -> Self {
        ModeWorldConfig {
            modes: 2,
            horizon: 4,
            point_mass: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModeWorld {
    config: ModeWorldConfig,
    spec: TaskParamSpec,
    current: Option<(usize, usize, [f64; 2])>,
}

impl ModeWorld {
    pub fn new(config: ModeWorldConfig) -> Result<Self> {
        if config.modes < 2 || config.modes > 16 {
            return Err(SlideError::config("world.modes", "must be in 2..=16"));
        }
        if config.horizon == 0 {
            return Err(SlideError::config("world.horizon", "must be positive"));
        }
        Ok(ModeWorld {
            config,
            spec: TaskParamSpec::new(vec![ParamSpec::discrete("mode", config.modes)?])?,
            current: None,
        })
    }

    fn observe(&self, mode: usize, t: usize, pos: [f64; 2]) -> Vec<f64> {
        let mut obs: Vec<f64> = (0..self.config.modes).map(|m| if m == mode { 1.0 } else { 0.0 }).collect();
        obs.extend_from_slice(&pos);
        obs.push(t as f64 / self.config.horizon as f64);
        obs
    }
}

impl Environment for ModeWorld {
    fn param_spec(&self) -> &TaskParamSpec {
        &self.spec
    }

    fn obs_dim(&self) -> usize {
        self.config.modes + 3
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn max_action(&self) -> f64 {
        MAX_ACTION
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn reset(&mut self, params: &TaskParams, _seed: u64) -> Result<Vec<f64>> {
        params.validate(&self.spec)?;
        let mode = params.category(0);
        self.current = Some((mode, 0, [0.0, 0.0]));
        Ok(self.observe(mode, 0, [0.0, 0.0]))
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let (mode, t, pos) = self
            .current
            .ok_or_else(|| SlideError::State("step before reset".into()))?;
        if t >= self.config.horizon {
            return Err(SlideError::State("episode already finished".into()));
        }
        let applied: Vec<f64> = if self.config.point_mass {
            action.iter().map(|a| if a.is_nan() { 0.0 } else { a.clamp(-MAX_ACTION, MAX_ACTION) }).collect()
        } else {
            vec![0.0; 2]
        };
        let next = [(pos[0] + applied[0]).clamp(-1.0, 1.0), (pos[1] + applied[1]).clamp(-1.0, 1.0)];
        let t = t + 1;
        self.current = Some((mode, t, next));
        Ok(EnvStep {
            observation: self.observe(mode, t, next),
            reward: 0.0,
            done: t >= self.config.horizon,
            applied_action: applied,
        })
    }
}

/// `I(mode; z)` under a uniform skill prior, by enumeration over modes.
/// Each skill's distribution must be over the single `mode` parameter.
pub fn enumerated_mutual_information(per_skill: &[FactorizedDistribution]) -> Result<f64> {
    let k = per_skill.len();
    if k == 0 {
        return Err(SlideError::Domain("no skills".into()));
    }
    let modes = match per_skill[0].spec().params() {
        [p] if p.head_arity() >= 2 => p.head_arity(),
        _ => return Err(SlideError::Domain("expected a single discrete parameter".into())),
    };
    let mut joint = vec![vec![0.0; modes]; k];
    for (z, dist) in per_skill.iter().enumerate() {
        for (m, cell) in joint[z].iter_mut().enumerate() {
            *cell = dist.log_prob(&TaskParams::new(vec![m as f64]))?.exp() / k as f64;
        }
    }
    let marginal: Vec<f64> = (0..modes).map(|m| joint.iter().map(|row| row[m]).sum()).collect();
    let mut mi = 0.0;
    for row in &joint {
        for (m, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (marginal[m] / k as f64)).ln();
            }
        }
    }
    Ok(mi)
}
