//! Comparison arms: uniform task sampling, a next-state skill classifier
//! in the style of DIAYN, and skill-free SAC on the target task.
//!
//! The first two are discovery methods selected through
//! [`Method`](crate::config::Method) and run by the same loop as the main
//! method; flat SAC shares the transfer harness and metrics schema.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Config, Method};
use crate::discovery::{DiscoveryOutcome, DiscoveryRun};
use crate::error::{Result, SlideError};
use crate::hrl::{evaluate, write_transfer_csv, EvalPolicy, TransferOutcome, TransferRow};
use crate::nn::{all_finite, log_softmax, Activation, Adam, AdamConfig, Mlp};
use crate::param_space::TaskParams;
use crate::seed::derive_rng;
use crate::skill_policy::{ActMode, ReplayBuffer, SkillPolicy};

/// Per-state skill classifier `q_s(z | s')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateClassifier {
    num_skills: usize,
    net: Mlp,
    adam: Adam,
}

impl StateClassifier {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, num_skills: usize, hidden: usize, adam: AdamConfig, rng: &mut R) -> Self {
        let net = Mlp::new(&[obs_dim, hidden, hidden, num_skills], Activation::Relu, Activation::Identity, rng);
        StateClassifier {
            num_skills,
            adam: Adam::new(net.num_params(), adam),
            net,
        }
    }

    pub fn log_posterior(&self, obs: &[f64]) -> Vec<f64> {
        log_softmax(&self.net.predict(obs, 1))
    }

    /// `log q_s(z | s') − log p(z)` for each row.
    pub fn intrinsic_rewards(&self, rows: &[(&[f64], usize)]) -> Vec<f64> {
        if rows.is_empty() {
            return Vec::new();
        }
        let input: Vec<f64> = rows.iter().flat_map(|(o, _)| o.iter().copied()).collect();
        let logits = self.net.predict(&input, rows.len());
        let log_k = (self.num_skills as f64).ln();
        logits
            .chunks_exact(self.num_skills)
            .zip(rows)
            .map(|(l, &(_, z))| log_softmax(l)[z] + log_k)
            .collect()
    }

    /// One cross-entropy step; returns the pre-step loss.
    pub fn train_step(&mut self, rows: &[(&[f64], usize)]) -> Result<f64> {
        if rows.is_empty() {
            return Err(SlideError::Domain("empty classifier batch".into()));
        }
        let input: Vec<f64> = rows.iter().flat_map(|(o, _)| o.iter().copied()).collect();
        let cache = self.net.forward(&input, rows.len());
        let n = rows.len() as f64;
        let mut loss = 0.0;
        let mut d = Vec::with_capacity(rows.len() * self.num_skills);
        for (l, &(_, z)) in cache.output().chunks_exact(self.num_skills).zip(rows) {
            let lp = log_softmax(l);
            loss -= lp[z] / n;
            d.extend(lp.iter().enumerate().map(|(i, v)| (v.exp() - if i == z { 1.0 } else { 0.0 }) / n));
        }
        let mut grad = vec![0.0; self.net.num_params()];
        self.net.backward(&cache, &d, &mut grad, false);
        if !loss.is_finite() || !all_finite(&grad) {
            return Err(SlideError::NonFinite("state classifier loss".into()));
        }
        self.adam.step(self.net.params_mut(), &grad);
        Ok(loss)
    }

    pub fn accuracy(&self, rows: &[(&[f64], usize)]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let correct = rows
            .iter()
            .filter(|(o, z)| {
                let lp = self.log_posterior(o);
                lp.iter().enumerate().all(|(i, v)| i == *z || *v < lp[*z])
            })
            .count();
        correct as f64 / rows.len() as f64
    }
}

pub fn run_uniform_discovery(mut config: Config, out_dir: Option<&Path>) -> Result<DiscoveryOutcome> {
    config.discovery.method = Method::UniformTasks;
    DiscoveryRun::new(config)?.run(out_dir)
}

pub fn run_diayn_style(mut config: Config, out_dir: Option<&Path>) -> Result<DiscoveryOutcome> {
    config.discovery.method = Method::NextStateDiscriminator;
    DiscoveryRun::new(config)?.run(out_dir)
}

/// Skill-free SAC trained directly on `transfer.target_params`, evaluated
/// with the transfer protocol.
pub fn run_flat_sac(config: &Config, out_dir: Option<&Path>) -> Result<TransferOutcome> {
    let mut env = config.world.build()?;
    let target = TaskParams::new(config.transfer.target_params.clone());
    target.validate(env.param_spec())?;
    let t = &config.transfer;
    let mut init_rng = derive_rng(config.seed, "flat_sac:init", 0);
    let mut policy = SkillPolicy::new(env.obs_dim(), env.action_dim(), 1, env.max_action(), config.sac.clone(), &mut init_rng)?;
    let mut replay = ReplayBuffer::new(config.sac.replay_capacity);
    let mut rollout_rng = derive_rng(config.seed, "flat_sac:rollout", 0);
    let mut sac_rng = derive_rng(config.seed, "flat_sac:sac", 0);
    let mut rows = Vec::new();
    let mut obs = env.reset(&target, rollout_rng.random())?;
    for step in 1..=t.steps {
        let action = policy.act(&obs, 0, ActMode::Stochastic, &mut rollout_rng)?;
        let s = env.step(&action)?;
        replay.push(policy.make_record(&obs, 0, &s.applied_action, s.reward, &s.observation, false));
        obs = if s.done { env.reset(&target, rollout_rng.random())? } else { s.observation };
        if step % config.sac.update_every as u64 == 0 && replay.len() >= config.sac.batch_size {
            policy.update_from_buffer(&replay, &mut sac_rng)?;
        }
        if step % t.eval_every == 0 || step == t.steps {
            let eval = evaluate(env.as_mut(), &target, &EvalPolicy::Flat(&policy), t, config.seed)?;
            rows.push(TransferRow::from_eval(step, &eval, 1));
            obs = env.reset(&target, rollout_rng.random())?;
        }
    }
    if rows.is_empty() {
        let eval = evaluate(env.as_mut(), &target, &EvalPolicy::Flat(&policy), t, config.seed)?;
        rows.push(TransferRow::from_eval(0, &eval, 1));
    }
    if let Some(dir) = out_dir {
        write_transfer_csv(&dir.join("transfer.csv"), &rows)?;
    }
    Ok(TransferOutcome { rows, policy, q: None })
}
