//! Skill-conditioned soft actor-critic.
//!
//! The actor maps `[obs ‖ one-hot(z)]` to a diagonal Gaussian over a
//! pre-squash variable `u`; actions are `δ_max · tanh(u)`. Densities,
//! critic inputs and replay records all use the normalized action
//! `tanh(u) ∈ (-1, 1)`, so the entropy target `-|A|` does not depend on
//! the environment's action scale.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlideError};
use crate::nn::{all_finite, Activation, Adam, AdamConfig, Mlp};

pub const ACTOR_LOG_STD_BOUNDS: (f64, f64) = (-20.0, 2.0);
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const TANH_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    /// Polyak coefficient for target critics.
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Environment steps per gradient update.
    pub update_every: usize,
    pub initial_temperature: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: 64,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 128,
            replay_capacity: 200_000,
            update_every: 1,
            initial_temperature: 1.0,
        }
    }
}

impl SacConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(SlideError::config("sac.gamma", "must be in [0, 1]"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(SlideError::config("sac.tau", "must be in (0, 1]"));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(SlideError::config("sac.batch_size", "must be positive and at most replay_capacity"));
        }
        if self.update_every == 0 {
            return Err(SlideError::config("sac.update_every", "must be positive"));
        }
        if !(self.initial_temperature > 0.0) {
            return Err(SlideError::config("sac.initial_temperature", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// One replay record. `action` is normalized to `(-1, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub obs: Vec<f64>,
    pub skill: usize,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<Record>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            records: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, record: Record) {
        if self.records.len() < self.capacity {
            self.records.push(record);
        } else {
            self.records[self.next] = record;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Oldest record first.
    pub fn iter(&self) -> impl Iterator<Item = &Record> {
        let split = if self.records.len() < self.capacity { 0 } else { self.next };
        self.records[split..].iter().chain(&self.records[..split])
    }

    /// Uniform sample without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Record>> {
        if self.records.len() < n {
            return Err(SlideError::NotReady(format!(
                "replay holds {} records, batch needs {n}",
                self.records.len()
            )));
        }
        Ok(index::sample(rng, self.records.len(), n)
            .into_iter()
            .map(|i| &self.records[i])
            .collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SacReport {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
    pub sac_temp: f64,
    /// `-E[log π]` over the batch.
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillPolicy {
    obs_dim: usize,
    action_dim: usize,
    num_skills: usize,
    max_action: f64,
    config: SacConfig,
    actor: Mlp,
    critics: [Mlp; 2],
    targets: [Mlp; 2],
    actor_adam: Adam,
    critic_adams: [Adam; 2],
    log_sac_temp: f64,
    temp_adam: Adam,
    updates: u64,
}

/// Reparameterized actor sample for one row.
struct Sample {
    /// Normalized action `tanh(u)`.
    action: Vec<f64>,
    log_prob: f64,
    /// `∂ log π / ∂u` holding ε fixed, per dimension.
    dlogp_du: Vec<f64>,
    std: Vec<f64>,
    eps: Vec<f64>,
    /// −1 / 0 / +1 for a raw `log_std` below, inside, or above its bounds.
    clamp_side: Vec<i8>,
}

fn squashed_sample(mean: &[f64], raw_log_std: &[f64], eps: &[f64]) -> Sample {
    let (lo, hi) = ACTOR_LOG_STD_BOUNDS;
    let mut s = Sample {
        action: Vec::with_capacity(mean.len()),
        log_prob: 0.0,
        dlogp_du: Vec::with_capacity(mean.len()),
        std: Vec::with_capacity(mean.len()),
        eps: eps.to_vec(),
        clamp_side: Vec::with_capacity(mean.len()),
    };
    for j in 0..mean.len() {
        let ls = raw_log_std[j].clamp(lo, hi);
        let std = ls.exp();
        let u = mean[j] + std * eps[j];
        let a = u.tanh();
        let one_minus = 1.0 - a * a;
        s.log_prob += -0.5 * eps[j] * eps[j] - ls - HALF_LN_2PI - (one_minus + TANH_EPS).ln();
        s.dlogp_du.push(2.0 * a * one_minus / (one_minus + TANH_EPS));
        s.action.push(a);
        s.std.push(std);
        s.clamp_side.push(if raw_log_std[j] > hi {
            1
        } else if raw_log_std[j] < lo {
            -1
        } else {
            0
        });
    }
    s
}

/// `log π(a)` of a normalized action under the squashed Gaussian.
pub fn squashed_log_prob(mean: &[f64], raw_log_std: &[f64], action: &[f64]) -> f64 {
    let (lo, hi) = ACTOR_LOG_STD_BOUNDS;
    mean.iter()
        .zip(raw_log_std)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let ls = ls.clamp(lo, hi);
            let u = a.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh();
            let z = (u - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI - (1.0 - a * a + TANH_EPS).ln()
        })
        .sum()
}

impl SkillPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        num_skills: usize,
        max_action: f64,
        config: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if num_skills == 0 {
            return Err(SlideError::config("num_skills", "must be at least 1"));
        }
        let h = config.hidden;
        let actor = Mlp::new(&[obs_dim + num_skills, h, h, 2 * action_dim], Activation::Relu, Activation::Identity, rng);
        let critic_sizes = [obs_dim + num_skills + action_dim, h, h, 1];
        let critics = [
            Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, rng),
            Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, rng),
        ];
        let targets = critics.clone();
        let adam = config.adam();
        Ok(SkillPolicy {
            obs_dim,
            action_dim,
            num_skills,
            max_action,
            actor_adam: Adam::new(actor.num_params(), adam),
            critic_adams: [Adam::new(critics[0].num_params(), adam), Adam::new(critics[1].num_params(), adam)],
            temp_adam: Adam::new(1, adam),
            log_sac_temp: config.initial_temperature.ln(),
            config,
            actor,
            critics,
            targets,
            updates: 0,
        })
    }

    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn max_action(&self) -> f64 {
        self.max_action
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn sac_temp(&self) -> f64 {
        self.log_sac_temp.exp()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn target_entropy(&self) -> f64 {
        -(self.action_dim as f64)
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self, i: usize) -> &Mlp {
        &self.critics[i]
    }

    pub fn critic_mut(&mut self, i: usize) -> &mut Mlp {
        &mut self.critics[i]
    }

    pub fn target(&self, i: usize) -> &Mlp {
        &self.targets[i]
    }

    fn check_skill(&self, z: usize) -> Result<()> {
        if z >= self.num_skills {
            return Err(SlideError::Domain(format!("skill {z} out of range for K = {}", self.num_skills)));
        }
        Ok(())
    }

    fn actor_input(&self, obs: &[f64], z: usize, out: &mut Vec<f64>) {
        out.extend_from_slice(obs);
        out.extend((0..self.num_skills).map(|k| if k == z { 1.0 } else { 0.0 }));
    }

    /// Raw actor head `(mean, log_std)` before clamping.
    pub fn actor_head(&self, obs: &[f64], z: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_skill(z)?;
        if obs.len() != self.obs_dim {
            return Err(SlideError::Domain(format!("observation has {} entries, expected {}", obs.len(), self.obs_dim)));
        }
        let mut input = Vec::with_capacity(self.actor.input_dim());
        self.actor_input(obs, z, &mut input);
        let out = self.actor.predict(&input, 1);
        let (m, ls) = out.split_at(self.action_dim);
        Ok((m.to_vec(), ls.to_vec()))
    }

    /// Environment-scale action in `[-δ_max, δ_max]`.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], z: usize, mode: ActMode, rng: &mut R) -> Result<Vec<f64>> {
        let (mean, log_std) = self.actor_head(obs, z)?;
        let normalized: Vec<f64> = match mode {
            ActMode::Deterministic => mean.iter().map(|m| m.tanh()).collect(),
            ActMode::Stochastic => {
                let eps: Vec<f64> = (0..self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
                squashed_sample(&mean, &log_std, &eps).action
            }
        };
        Ok(normalized.iter().map(|a| a * self.max_action).collect())
    }

    /// Stores an environment step; `action` is environment-scale.
    pub fn make_record(&self, obs: &[f64], skill: usize, action: &[f64], reward: f64, next_obs: &[f64], done: bool) -> Record {
        Record {
            obs: obs.to_vec(),
            skill,
            action: action
                .iter()
                .map(|a| (a / self.max_action).clamp(-1.0 + 1e-6, 1.0 - 1e-6))
                .collect(),
            reward,
            next_obs: next_obs.to_vec(),
            done,
        }
    }

    fn critic_inputs(&self, batch: &[&Record], next: bool, actions: &[Vec<f64>]) -> Vec<f64> {
        let mut x = Vec::with_capacity(batch.len() * self.critics[0].input_dim());
        for (r, a) in batch.iter().zip(actions) {
            self.actor_input(if next { &r.next_obs } else { &r.obs }, r.skill, &mut x);
            x.extend_from_slice(a);
        }
        x
    }

    fn actor_samples(&self, batch: &[&Record], next: bool, noise: &[f64]) -> (crate::nn::Cache, Vec<Sample>) {
        let mut input = Vec::with_capacity(batch.len() * self.actor.input_dim());
        for r in batch {
            self.actor_input(if next { &r.next_obs } else { &r.obs }, r.skill, &mut input);
        }
        let cache = self.actor.forward(&input, batch.len());
        let a = self.action_dim;
        let samples = cache
            .output()
            .chunks_exact(2 * a)
            .zip(noise.chunks_exact(a))
            .map(|(head, eps)| squashed_sample(&head[..a], &head[a..], eps))
            .collect();
        (cache, samples)
    }

    /// Bellman targets using the target critics and next-action noise.
    pub fn critic_targets(&self, batch: &[&Record], next_noise: &[f64]) -> Vec<f64> {
        let (_, next) = self.actor_samples(batch, true, next_noise);
        let actions: Vec<Vec<f64>> = next.iter().map(|s| s.action.clone()).collect();
        let x = self.critic_inputs(batch, true, &actions);
        let q1 = self.targets[0].predict(&x, batch.len());
        let q2 = self.targets[1].predict(&x, batch.len());
        let temp = self.sac_temp();
        batch
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cont = if r.done { 0.0 } else { 1.0 };
                r.reward + self.config.gamma * cont * (q1[i].min(q2[i]) - temp * next[i].log_prob)
            })
            .collect()
    }

    /// Loss `½·mean (Q_i − y)²` and its gradient for critic `i`.
    pub fn critic_loss_and_gradient(&self, i: usize, batch: &[&Record], targets: &[f64]) -> (f64, Vec<f64>) {
        let actions: Vec<Vec<f64>> = batch.iter().map(|r| r.action.clone()).collect();
        let x = self.critic_inputs(batch, false, &actions);
        let cache = self.critics[i].forward(&x, batch.len());
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let d: Vec<f64> = cache
            .output()
            .iter()
            .zip(targets)
            .map(|(q, y)| {
                loss += 0.5 * (q - y) * (q - y) / n;
                (q - y) / n
            })
            .collect();
        let mut grad = vec![0.0; self.critics[i].num_params()];
        self.critics[i].backward(&cache, &d, &mut grad, false);
        (loss, grad)
    }

    /// Actor loss `mean(temp·log π − min Q)` with fixed reparameterization
    /// noise, its gradient, and the batch log-probabilities.
    pub fn actor_loss_and_gradient(&self, batch: &[&Record], noise: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let a_dim = self.action_dim;
        let n = batch.len() as f64;
        let temp = self.sac_temp();
        let (cache, samples) = self.actor_samples(batch, false, noise);
        let actions: Vec<Vec<f64>> = samples.iter().map(|s| s.action.clone()).collect();
        let x = self.critic_inputs(batch, false, &actions);
        let c1 = self.critics[0].forward(&x, batch.len());
        let c2 = self.critics[1].forward(&x, batch.len());
        let ones = vec![1.0; batch.len()];
        let mut scratch = vec![0.0; self.critics[0].num_params()];
        let dx1 = self.critics[0].backward(&c1, &ones, &mut scratch, true);
        let dx2 = self.critics[1].backward(&c2, &ones, &mut scratch, true);
        let width = self.critics[0].input_dim();
        let mut loss = 0.0;
        let mut d_head = Vec::with_capacity(batch.len() * 2 * a_dim);
        let mut log_probs = Vec::with_capacity(batch.len());
        for (i, s) in samples.iter().enumerate() {
            let (q, dx) = if c1.output()[i] <= c2.output()[i] {
                (c1.output()[i], &dx1)
            } else {
                (c2.output()[i], &dx2)
            };
            loss += (temp * s.log_prob - q) / n;
            log_probs.push(s.log_prob);
            let dq_da = &dx[i * width + width - a_dim..(i + 1) * width];
            let mut d_ls = Vec::with_capacity(a_dim);
            for j in 0..a_dim {
                let da_du = 1.0 - s.action[j] * s.action[j];
                let dloss_du = temp * s.dlogp_du[j] - dq_da[j] * da_du;
                d_head.push(dloss_du / n);
                let g = (-temp + dloss_du * s.std[j] * s.eps[j]) / n;
                // A clamped log_std only receives gradient that points back
                // inside the bounds.
                d_ls.push(match s.clamp_side[j] {
                    1 if g < 0.0 => 0.0,
                    -1 if g > 0.0 => 0.0,
                    _ => g,
                });
            }
            d_head.extend(d_ls);
        }
        let mut grad = vec![0.0; self.actor.num_params()];
        self.actor.backward(&cache, &d_head, &mut grad, false);
        (loss, grad, log_probs)
    }

    /// One SAC step on a sampled batch.
    pub fn update_from_buffer<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<SacReport> {
        let batch = buffer.sample(self.config.batch_size, rng)?;
        self.update_batch(&batch, rng)
    }

    /// One SAC step on an explicit batch.
    pub fn update_batch<R: Rng + ?Sized>(&mut self, batch: &[&Record], rng: &mut R) -> Result<SacReport> {
        if batch.is_empty() {
            return Err(SlideError::NotReady("empty SAC batch".into()));
        }
        for r in batch {
            self.check_skill(r.skill)?;
        }
        let noise_len = batch.len() * self.action_dim;
        let next_noise: Vec<f64> = (0..noise_len).map(|_| rng.sample(StandardNormal)).collect();
        let noise: Vec<f64> = (0..noise_len).map(|_| rng.sample(StandardNormal)).collect();

        let y = self.critic_targets(batch, &next_noise);
        let (l1, g1) = self.critic_loss_and_gradient(0, batch, &y);
        let (l2, g2) = self.critic_loss_and_gradient(1, batch, &y);
        if !(l1.is_finite() && l2.is_finite() && all_finite(&g1) && all_finite(&g2)) {
            return Err(SlideError::NonFinite(format!("critic loss ({l1}, {l2})")));
        }
        self.critic_adams[0].step(self.critics[0].params_mut(), &g1);
        self.critic_adams[1].step(self.critics[1].params_mut(), &g2);

        let (actor_loss, ga, log_probs) = self.actor_loss_and_gradient(batch, &noise);
        if !actor_loss.is_finite() || !all_finite(&ga) {
            return Err(SlideError::NonFinite(format!("actor loss {actor_loss}")));
        }
        self.actor_adam.step(self.actor.params_mut(), &ga);

        let mean_log_prob = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
        let temp_grad = -(mean_log_prob + self.target_entropy());
        let mut lt = [self.log_sac_temp];
        self.temp_adam.step(&mut lt, &[temp_grad]);
        self.log_sac_temp = lt[0].clamp(-20.0, 5.0);

        let tau = self.config.tau;
        for i in 0..2 {
            let online = self.critics[i].clone();
            self.targets[i].soft_update_from(&online, tau);
        }
        self.updates += 1;
        Ok(SacReport {
            critic1_loss: l1,
            critic2_loss: l2,
            actor_loss,
            sac_temp: self.sac_temp(),
            entropy: -mean_log_prob,
        })
    }

    /// Q-value of the first critic on an environment-scale action.
    pub fn q_value(&self, obs: &[f64], z: usize, action: &[f64]) -> Result<f64> {
        self.check_skill(z)?;
        let mut x = Vec::new();
        self.actor_input(obs, z, &mut x);
        x.extend(action.iter().map(|a| a / self.max_action));
        Ok(self.critics[0].predict(&x, 1)[0])
    }

    /// Flattened parameters of every network and the temperature.
    pub fn fingerprint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for net in [&self.actor, &self.critics[0], &self.critics[1], &self.targets[0], &self.targets[1]] {
            for p in net.params() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.log_sac_temp.to_le_bytes());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tests::rel_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> SacConfig {
        SacConfig {
            hidden: 16,
            batch_size: 8,
            replay_capacity: 100,
            ..SacConfig::default()
        }
    }

    fn policy(k: usize, seed: u64) -> SkillPolicy {
        SkillPolicy::new(3, 2, k, 0.2, small_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn toy_batch(rng: &mut ChaCha8Rng, k: usize) -> Vec<Record> {
        (0..8)
            .map(|i| {
                let s = (i % 2) as f64;
                Record {
                    obs: vec![s, 1.0 - s, 0.5],
                    skill: i % k,
                    action: vec![rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)],
                    reward: s,
                    next_obs: vec![1.0 - s, s, 0.5],
                    done: i == 7,
                }
            })
            .collect()
    }

    fn set_log_std_bias(p: &mut SkillPolicy, value: f64) {
        p.actor_mut().zero_weights();
        let params = p.actor_mut().params_mut();
        let n = params.len();
        for v in &mut params[n - 2..] {
            *v = value;
        }
    }

    #[test]
    fn floor_log_std_makes_stochastic_match_deterministic() {
        let mut p = policy(2, 0);
        set_log_std_bias(&mut p, -30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = [0.3, 0.1, 0.9];
        let det = p.act(&obs, 1, ActMode::Deterministic, &mut rng).unwrap();
        let sto = p.act(&obs, 1, ActMode::Stochastic, &mut rng).unwrap();
        for (a, b) in det.iter().zip(&sto) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn actions_always_within_bounds() {
        let mut p = policy(2, 2);
        set_log_std_bias(&mut p, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..10_000 {
            let obs = [rng.random_range(-5.0..5.0), 0.0, 1.0];
            for a in p.act(&obs, i % 2, ActMode::Stochastic, &mut rng).unwrap() {
                assert!(a.abs() <= 0.2 && a.is_finite());
            }
        }
    }

    #[test]
    fn act_is_deterministic_given_seed_and_checks_skill() {
        let p = policy(3, 4);
        let obs = [0.2, 0.4, 0.6];
        let a = p.act(&obs, 2, ActMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = p.act(&obs, 2, ActMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(p.act(&obs, 3, ActMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(5)), Err(SlideError::Domain(_))));
    }

    #[test]
    fn squashed_density_integrates_to_one() {
        for (m, ls) in [(0.0, 0.0), (0.7, -1.0), (-1.5, 0.5)] {
            let n = 200_000;
            let h = 2.0 / n as f64;
            let total: f64 = (0..n)
                .map(|i| {
                    let a = -1.0 + (i as f64 + 0.5) * h;
                    squashed_log_prob(&[m], &[ls], &[a]).exp() * h
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-2, "mass {total} for ({m}, {ls})");
        }
    }

    #[test]
    fn sample_log_prob_matches_density() {
        let eps = [0.3, -1.2];
        let s = squashed_sample(&[0.1, -0.4], &[-0.5, 0.2], &eps);
        let direct = squashed_log_prob(&[0.1, -0.4], &[-0.5, 0.2], &s.action);
        assert!((s.log_prob - direct).abs() < 1e-6);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = policy(2, 7);
        let records = toy_batch(&mut rng, 2);
        let batch: Vec<&Record> = records.iter().collect();
        let noise: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
        let y = p.critic_targets(&batch, &noise);
        let (_, analytic) = p.critic_loss_and_gradient(0, &batch, &y);
        let params = p.critic(0).params().to_vec();
        let h = 1e-6;
        let fd: Vec<f64> = (0..params.len())
            .map(|i| {
                p.critic_mut(0).params_mut()[i] = params[i] + h;
                let lp = p.critic_loss_and_gradient(0, &batch, &y).0;
                p.critic_mut(0).params_mut()[i] = params[i] - h;
                let lm = p.critic_loss_and_gradient(0, &batch, &y).0;
                p.critic_mut(0).params_mut()[i] = params[i];
                (lp - lm) / (2.0 * h)
            })
            .collect();
        let err = rel_error(&analytic, &fd);
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = policy(2, 9);
        let records = toy_batch(&mut rng, 2);
        let batch: Vec<&Record> = records.iter().collect();
        let noise: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
        let (_, analytic, _) = p.actor_loss_and_gradient(&batch, &noise);
        let params = p.actor().params().to_vec();
        let h = 1e-6;
        let fd: Vec<f64> = (0..params.len())
            .map(|i| {
                p.actor_mut().params_mut()[i] = params[i] + h;
                let lp = p.actor_loss_and_gradient(&batch, &noise).0;
                p.actor_mut().params_mut()[i] = params[i] - h;
                let lm = p.actor_loss_and_gradient(&batch, &noise).0;
                p.actor_mut().params_mut()[i] = params[i];
                (lp - lm) / (2.0 * h)
            })
            .collect();
        let err = rel_error(&analytic, &fd);
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn replay_evicts_fifo_and_reports_not_ready() {
        let mut buf = ReplayBuffer::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        assert!(matches!(buf.sample(1, &mut rng), Err(SlideError::NotReady(_))));
        for i in 0..5 {
            buf.push(Record { obs: vec![i as f64], skill: 0, action: vec![], reward: 0.0, next_obs: vec![], done: false });
        }
        let order: Vec<f64> = buf.iter().map(|r| r.obs[0]).collect();
        assert_eq!(order, vec![2.0, 3.0, 4.0]);
        let mut drawn: Vec<f64> = buf.sample(3, &mut rng).unwrap().iter().map(|r| r.obs[0]).collect();
        drawn.sort_by(f64::total_cmp);
        assert_eq!(drawn, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn targets_stay_convex_combination_of_online_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = policy(2, 12);
        let records = toy_batch(&mut rng, 2);
        let batch: Vec<&Record> = records.iter().collect();
        let mut lo: Vec<f64> = p.critic(0).params().to_vec();
        let mut hi = lo.clone();
        for _ in 0..20 {
            p.update_batch(&batch, &mut rng).unwrap();
            for (i, v) in p.critic(0).params().iter().enumerate() {
                lo[i] = lo[i].min(*v);
                hi[i] = hi[i].max(*v);
            }
            for (i, t) in p.target(0).params().iter().enumerate() {
                assert!(*t >= lo[i] - 1e-12 && *t <= hi[i] + 1e-12);
            }
        }
    }

    #[test]
    fn zero_discount_constant_reward_gives_unit_values() {
        let config = SacConfig { gamma: 0.0, batch_size: 32, lr: 1e-3, hidden: 32, ..SacConfig::default() };
        let mut p = SkillPolicy::new(3, 2, 2, 0.2, config, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut buf = ReplayBuffer::new(10_000);
        for _ in 0..2000 {
            let obs: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let z = rng.random_range(0..2);
            let a = p.act(&obs, z, ActMode::Stochastic, &mut rng).unwrap();
            let r = p.make_record(&obs, z, &a, 1.0, &obs, false);
            buf.push(r);
        }
        for _ in 0..1500 {
            p.update_from_buffer(&buf, &mut rng).unwrap();
        }
        for r in buf.iter().take(200) {
            let q = p.q_value(&r.obs, r.skill, &r.action.iter().map(|a| a * 0.2).collect::<Vec<_>>()).unwrap();
            assert!((q - 1.0).abs() < 0.05, "q = {q}");
        }
    }

    #[test]
    fn opposite_rewards_make_skills_diverge() {
        // A one-step bandit over a 2-D action: skill 0 is paid a·(1, 1), skill 1 the negation.
        let config = SacConfig { gamma: 0.0, batch_size: 64, lr: 1e-3, hidden: 32, ..SacConfig::default() };
        let mut p = SkillPolicy::new(3, 2, 2, 0.2, config, &mut ChaCha8Rng::seed_from_u64(15)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut buf = ReplayBuffer::new(100_000);
        for step in 0..4000 {
            let obs: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let z = step % 2;
            let a = p.act(&obs, z, ActMode::Stochastic, &mut rng).unwrap();
            let sign = if z == 0 { 1.0 } else { -1.0 };
            let reward = sign * (a[0] + a[1]) / 0.2;
            buf.push(p.make_record(&obs, z, &a, reward, &obs, true));
            if buf.len() >= 64 {
                p.update_from_buffer(&buf, &mut rng).unwrap();
            }
        }
        let (mut dot, mut n0, mut n1) = (0.0, 0.0, 0.0);
        for _ in 0..200 {
            let obs: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let a0 = p.act(&obs, 0, ActMode::Deterministic, &mut rng).unwrap();
            let a1 = p.act(&obs, 1, ActMode::Deterministic, &mut rng).unwrap();
            dot += a0[0] * a1[0] + a0[1] * a1[1];
            n0 += a0[0] * a0[0] + a0[1] * a0[1];
            n1 += a1[0] * a1[0] + a1[1] * a1[1];
        }
        let corr = dot / (n0 * n1).sqrt();
        assert!(corr < 0.2, "action correlation {corr}");
    }
}
