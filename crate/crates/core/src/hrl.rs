//! Transfer: a deep-Q high-level policy picks a skill index every
//! `hold_steps` low-level steps on a fixed target task, optionally
//! finetuning the active skill with SAC.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::config::{Config, DqnConfig, Selector, TransferConfig};
use crate::discovery::SkillSet;
use crate::env::Environment;
use crate::error::{Result, SlideError};
use crate::nn::{all_finite, Activation, Adam, AdamConfig, Mlp};
use crate::param_space::TaskParams;
use crate::seed::{derive_rng, derive_seed};
use crate::skill_policy::{ActMode, ReplayBuffer, SkillPolicy};

pub const TRANSFER_HEADER: &str = "step,eval_return_mean,eval_return_std,skill_selection_histogram";

/// `Q(s, ·)` over skills with a periodically synced target copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    num_skills: usize,
    net: Mlp,
    target: Mlp,
    adam: Adam,
}

/// One high-level transition spanning a held skill.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QRecord {
    pub obs: Vec<f64>,
    pub skill: usize,
    /// Discounted reward accumulated while the skill was held.
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// `γ^h` for a hold of `h` steps; 0 for terminal transitions.
    pub discount: f64,
}

pub fn argmax(values: &[f64]) -> usize {
    (0..values.len()).fold(0, |b, i| if values[i] > values[b] { i } else { b })
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, num_skills: usize, config: &DqnConfig, rng: &mut R) -> Self {
        let h = config.hidden;
        let net = Mlp::new(&[obs_dim, h, h, num_skills], Activation::Relu, Activation::Identity, rng);
        QNetwork {
            num_skills,
            target: net.clone(),
            adam: Adam::new(
                net.num_params(),
                AdamConfig {
                    lr: config.lr,
                    ..AdamConfig::default()
                },
            ),
            net,
        }
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn q_values(&self, obs: &[f64]) -> Vec<f64> {
        self.net.predict(obs, 1)
    }

    pub fn greedy(&self, obs: &[f64]) -> usize {
        argmax(&self.q_values(obs))
    }

    pub fn sync_target(&mut self) {
        self.target = self.net.clone();
    }

    /// Squared TD loss `½·mean (Q(s,z) − y)²` with `y` from the target net.
    pub fn loss_and_gradient(&self, batch: &[&QRecord]) -> (f64, Vec<f64>) {
        let k = self.num_skills;
        let n = batch.len() as f64;
        let next: Vec<f64> = batch.iter().flat_map(|r| r.next_obs.iter().copied()).collect();
        let next_q = self.target.predict(&next, batch.len());
        let input: Vec<f64> = batch.iter().flat_map(|r| r.obs.iter().copied()).collect();
        let cache = self.net.forward(&input, batch.len());
        let mut d = vec![0.0; batch.len() * k];
        let mut loss = 0.0;
        for (i, r) in batch.iter().enumerate() {
            let best = next_q[i * k..(i + 1) * k].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let y = r.reward + r.discount * best;
            let q = cache.output()[i * k + r.skill];
            loss += 0.5 * (q - y) * (q - y) / n;
            d[i * k + r.skill] = (q - y) / n;
        }
        let mut grad = vec![0.0; self.net.num_params()];
        self.net.backward(&cache, &d, &mut grad, false);
        (loss, grad)
    }

    pub fn update(&mut self, batch: &[&QRecord]) -> Result<f64> {
        let (loss, grad) = self.loss_and_gradient(batch);
        if !loss.is_finite() || !all_finite(&grad) {
            return Err(SlideError::NonFinite("deep-Q loss".into()));
        }
        self.adam.step(self.net.params_mut(), &grad);
        Ok(loss)
    }
}

/// Linear decay from `epsilon_start` to `epsilon_end` over the first
/// `epsilon_decay_fraction` of `total` steps.
pub fn epsilon_at(step: u64, total: u64, config: &DqnConfig) -> f64 {
    let horizon = config.epsilon_decay_fraction * total as f64;
    if horizon <= 0.0 {
        return config.epsilon_end;
    }
    let frac = (step as f64 / horizon).min(1.0);
    config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)
}

/// Ring buffer of high-level transitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct QReplay {
    capacity: usize,
    records: Vec<QRecord>,
    next: usize,
}

impl QReplay {
    fn push(&mut self, r: QRecord) {
        if self.records.len() < self.capacity {
            self.records.push(r);
        } else {
            self.records[self.next] = r;
        }
        self.next = (self.next + 1) % self.capacity;
    }
}

/// How evaluation episodes choose actions.
pub enum EvalPolicy<'a> {
    /// Skill chosen by `q` greedily, or uniformly at random if `q` is `None`.
    Hierarchical {
        q: Option<&'a QNetwork>,
        skills: &'a SkillPolicy,
    },
    /// A single skill-free actor.
    Flat(&'a SkillPolicy),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Fraction of skill decisions that picked each skill.
    pub histogram: Vec<f64>,
}

/// Deterministic-actor evaluation over `eval_episodes` episodes whose
/// seeds depend only on `seed` and the episode index.
pub fn evaluate(
    env: &mut dyn Environment,
    target: &TaskParams,
    policy: &EvalPolicy<'_>,
    config: &TransferConfig,
    seed: u64,
) -> Result<EvalResult> {
    let k = match policy {
        EvalPolicy::Hierarchical { skills, .. } => skills.num_skills(),
        EvalPolicy::Flat(_) => 1,
    };
    let mut counts = vec![0u64; k];
    let mut returns = Vec::with_capacity(config.eval_episodes);
    for ep in 0..config.eval_episodes {
        let mut rng = derive_rng(seed, "eval", ep as u64);
        let mut obs = env.reset(target, derive_seed(seed, "eval:episode", ep as u64))?;
        let mut total = 0.0;
        let mut z = 0;
        let mut t = 0;
        loop {
            let action = match policy {
                EvalPolicy::Flat(p) => p.act(&obs, 0, ActMode::Deterministic, &mut rng)?,
                EvalPolicy::Hierarchical { q, skills } => {
                    if t % config.hold_steps == 0 {
                        z = match q {
                            Some(q) => q.greedy(&obs),
                            None => rng.random_range(0..k),
                        };
                        counts[z] += 1;
                    }
                    skills.act(&obs, z, ActMode::Deterministic, &mut rng)?
                }
            };
            if let EvalPolicy::Flat(_) = policy {
                if t == 0 {
                    counts[0] += 1;
                }
            }
            let s = env.step(&action)?;
            total += s.reward;
            obs = s.observation;
            t += 1;
            if s.done {
                break;
            }
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let decisions = counts.iter().sum::<u64>().max(1) as f64;
    Ok(EvalResult {
        returns,
        mean,
        std,
        histogram: counts.iter().map(|&c| c as f64 / decisions).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferRow {
    pub step: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub histogram: Vec<f64>,
}

impl TransferRow {
    pub fn from_eval(step: u64, eval: &EvalResult, num_skills: usize) -> Self {
        let mut histogram = eval.histogram.clone();
        histogram.resize(num_skills, 0.0);
        TransferRow {
            step,
            eval_return_mean: eval.mean,
            eval_return_std: eval.std,
            histogram,
        }
    }
}

pub fn transfer_csv(rows: &[TransferRow]) -> String {
    let mut out = format!("{TRANSFER_HEADER}\n");
    for r in rows {
        let hist: Vec<String> = r.histogram.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(out, "{},{},{},\"{}\"", r.step, r.eval_return_mean, r.eval_return_std, hist.join(","));
    }
    out
}

pub fn write_transfer_csv(path: &Path, rows: &[TransferRow]) -> Result<()> {
    write_atomic(path, transfer_csv(rows).as_bytes())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransferOptions {
    /// Skip training; one evaluation row at step 0.
    pub eval_only: bool,
}

#[derive(Debug)]
pub struct TransferOutcome {
    pub rows: Vec<TransferRow>,
    /// The (possibly finetuned) low-level policy.
    pub policy: SkillPolicy,
    pub q: Option<QNetwork>,
}

/// Trains the high-level policy on `transfer.target_params`.
pub fn run_transfer(skills: &SkillSet, config: &Config, options: TransferOptions, out_dir: Option<&Path>) -> Result<TransferOutcome> {
    let k = skills.num_skills;
    if k != config.discovery.num_skills {
        return Err(SlideError::config(
            "num_skills",
            format!("checkpoint has {k} skills, config expects {}", config.discovery.num_skills),
        ));
    }
    if skills.world != config.world {
        return Err(SlideError::config("world", "checkpoint was discovered in a different world"));
    }
    let mut env = config.world.build()?;
    let outcome = transfer_in(env.as_mut(), skills.policy.clone(), config, options)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_transfer_csv(&dir.join("transfer.csv"), &outcome.rows)?;
    }
    Ok(outcome)
}

/// The transfer loop against an arbitrary environment.
pub fn transfer_in(env: &mut dyn Environment, mut policy: SkillPolicy, config: &Config, options: TransferOptions) -> Result<TransferOutcome> {
    let t = &config.transfer;
    let k = policy.num_skills();
    let target = TaskParams::new(t.target_params.clone());
    target.validate(env.param_spec())?;
    let mut q = (t.selector == Selector::QLearning)
        .then(|| QNetwork::new(env.obs_dim(), k, &t.dqn, &mut derive_rng(config.seed, "init:high_level", 0)));
    let mut rows = Vec::new();
    let eval = |env: &mut dyn Environment, q: &Option<QNetwork>, policy: &SkillPolicy| {
        evaluate(env, &target, &EvalPolicy::Hierarchical { q: q.as_ref(), skills: policy }, t, config.seed)
    };

    if options.eval_only {
        rows.push(TransferRow::from_eval(0, &eval(env, &q, &policy)?, k));
        return Ok(TransferOutcome { rows, policy, q });
    }
    let mut rng = derive_rng(config.seed, "transfer:rollout", 0);
    let mut learn_rng = derive_rng(config.seed, "transfer:learn", 0);
    let mut q_replay = QReplay {
        capacity: t.dqn.replay_capacity,
        records: Vec::new(),
        next: 0,
    };
    let mut sac_replay = ReplayBuffer::new(config.sac.replay_capacity);
    let mut obs = env.reset(&target, rng.random())?;
    // (skill, steps remaining, start obs, accumulated reward, discount)
    let mut held: Option<(usize, usize, Vec<f64>, f64, f64)> = None;
    for step in 1..=t.steps {
        if held.is_none() {
            let eps = epsilon_at(step - 1, t.steps, &t.dqn);
            let z = match &q {
                Some(q) if rng.random::<f64>() >= eps => q.greedy(&obs),
                _ => rng.random_range(0..k),
            };
            held = Some((z, t.hold_steps, obs.clone(), 0.0, 1.0));
        }
        let (z, remaining, start, acc, disc) = held.as_mut().unwrap();
        let action = policy.act(&obs, *z, ActMode::Stochastic, &mut rng)?;
        let s = env.step(&action)?;
        *acc += *disc * s.reward;
        *disc *= t.gamma;
        *remaining -= 1;
        if t.finetune {
            sac_replay.push(policy.make_record(&obs, *z, &s.applied_action, s.reward, &s.observation, false));
            if step % config.sac.update_every as u64 == 0 && sac_replay.len() >= config.sac.batch_size {
                policy.update_from_buffer(&sac_replay, &mut learn_rng)?;
            }
        }
        if *remaining == 0 || s.done {
            q_replay.push(QRecord {
                obs: std::mem::take(start),
                skill: *z,
                reward: *acc,
                next_obs: s.observation.clone(),
                discount: *disc,
            });
            held = None;
        }
        obs = if s.done { env.reset(&target, rng.random())? } else { s.observation };
        if let Some(q) = &mut q {
            if q_replay.records.len() >= t.dqn.batch_size {
                let picks = rand::seq::index::sample(&mut learn_rng, q_replay.records.len(), t.dqn.batch_size);
                let batch: Vec<&QRecord> = picks.iter().map(|i| &q_replay.records[i]).collect();
                q.update(&batch)?;
            }
            if step % t.dqn.target_update_every == 0 {
                q.sync_target();
            }
        }
        if step % t.eval_every == 0 || step == t.steps {
            rows.push(TransferRow::from_eval(step, &eval(env, &q, &policy)?, k));
            obs = env.reset(&target, rng.random())?;
            held = None;
        }
    }
    if rows.is_empty() {
        rows.push(TransferRow::from_eval(0, &eval(env, &q, &policy)?, k));
    }
    Ok(TransferOutcome { rows, policy, q })
}
