//! Trajectory-level task discriminator `q(z | τ; θ_q)`.
//!
//! The initial observation and every transition `(s_t, a_t, r̂_t, s_{t+1})`
//! are encoded separately, step features are mean-pooled, and a head maps
//! `[pooled ‖ initial]` to `K` logits. Rewards enter scaled by a running
//! RMS so small dense rewards are not drowned out by positions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::error::{Result, SlideError};
use crate::nn::{all_finite, log_softmax, Activation, Adam, AdamConfig, Cache, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub hidden: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Trajectories per training step.
    pub batch_size: usize,
    /// FIFO of recent trajectories the batches are drawn from.
    pub buffer_capacity: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            hidden: 64,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 128,
            buffer_capacity: 4096,
        }
    }
}

impl DiscriminatorConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }
}

/// Running root-mean-square of rewards seen in training batches.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
struct RewardScale {
    sum_sq: f64,
    count: u64,
}

impl RewardScale {
    const FLOOR: f64 = 1e-3;

    fn observe(&mut self, rewards: impl Iterator<Item = f64>) {
        for r in rewards {
            self.sum_sq += r * r;
            self.count += 1;
        }
    }

    fn scale(&self) -> f64 {
        if self.count == 0 {
            1.0
        } else {
            (self.sum_sq / self.count as f64).sqrt().max(Self::FLOOR)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Discriminator {
    num_skills: usize,
    obs_dim: usize,
    action_dim: usize,
    init_encoder: Mlp,
    step_encoder: Mlp,
    head: Mlp,
    adams: [Adam; 3],
    reward_scale: RewardScale,
}

struct Forward {
    init: Cache,
    steps: Cache,
    head: Cache,
    lengths: Vec<usize>,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(
        num_skills: usize,
        obs_dim: usize,
        action_dim: usize,
        config: &DiscriminatorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if num_skills == 0 {
            return Err(SlideError::config("num_skills", "must be at least 1"));
        }
        let h = config.hidden;
        let init_encoder = Mlp::new(&[obs_dim, h, h], Activation::Relu, Activation::Relu, rng);
        let step_encoder = Mlp::new(&[2 * obs_dim + action_dim + 1, h, h], Activation::Relu, Activation::Relu, rng);
        let head = Mlp::new(&[2 * h, h, num_skills], Activation::Relu, Activation::Identity, rng);
        let adams = [
            Adam::new(init_encoder.num_params(), config.adam()),
            Adam::new(step_encoder.num_params(), config.adam()),
            Adam::new(head.num_params(), config.adam()),
        ];
        Ok(Discriminator {
            num_skills,
            obs_dim,
            action_dim,
            init_encoder,
            step_encoder,
            head,
            adams,
            reward_scale: RewardScale::default(),
        })
    }

    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    pub fn reward_scale(&self) -> f64 {
        self.reward_scale.scale()
    }

    fn check(&self, traj: &Trajectory) -> Result<()> {
        if traj.is_empty() {
            return Err(SlideError::Domain("empty trajectory".into()));
        }
        if traj.initial_obs.len() != self.obs_dim {
            return Err(SlideError::Domain(format!(
                "observation has {} entries, discriminator expects {}",
                traj.initial_obs.len(),
                self.obs_dim
            )));
        }
        if traj.transitions.iter().any(|t| t.action.len() != self.action_dim) {
            return Err(SlideError::Domain("action dimension mismatch".into()));
        }
        Ok(())
    }

    fn forward(&self, batch: &[&Trajectory]) -> Result<Forward> {
        let scale = self.reward_scale.scale();
        let mut init_in = Vec::with_capacity(batch.len() * self.obs_dim);
        let mut step_in = Vec::new();
        let mut lengths = Vec::with_capacity(batch.len());
        for traj in batch {
            self.check(traj)?;
            init_in.extend_from_slice(&traj.initial_obs);
            for t in &traj.transitions {
                step_in.extend_from_slice(&t.obs);
                step_in.extend_from_slice(&t.action);
                step_in.push(t.reward / scale);
                step_in.extend_from_slice(&t.next_obs);
            }
            lengths.push(traj.len());
        }
        let total: usize = lengths.iter().sum();
        let init = self.init_encoder.forward(&init_in, batch.len());
        let steps = self.step_encoder.forward(&step_in, total);
        let h = self.init_encoder.output_dim();
        let mut head_in = Vec::with_capacity(batch.len() * 2 * h);
        let mut row = 0;
        for (i, &len) in lengths.iter().enumerate() {
            let mut pooled = vec![0.0; h];
            for feat in steps.output()[row * h..(row + len) * h].chunks_exact(h) {
                pooled.iter_mut().zip(feat).for_each(|(p, f)| *p += f);
            }
            pooled.iter_mut().for_each(|p| *p /= len as f64);
            row += len;
            head_in.extend_from_slice(&pooled);
            head_in.extend_from_slice(&init.output()[i * h..(i + 1) * h]);
        }
        let head = self.head.forward(&head_in, batch.len());
        Ok(Forward { init, steps, head, lengths })
    }

    /// `log q(· | τ)` over all skills.
    pub fn log_posterior(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let fwd = self.forward(&[traj])?;
        Ok(log_softmax(fwd.head.output()))
    }

    /// Most likely skill for each trajectory.
    pub fn predict(&self, batch: &[&Trajectory]) -> Result<Vec<usize>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let fwd = self.forward(batch)?;
        Ok(fwd
            .head
            .output()
            .chunks_exact(self.num_skills)
            .map(|logits| {
                logits
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &l)| if l > b.1 { (i, l) } else { b })
                    .0
            })
            .collect())
    }

    /// Mean cross-entropy and its gradient (flattened init ‖ step ‖ head),
    /// at the current reward scale.
    pub fn loss_and_gradient(&self, batch: &[(&Trajectory, usize)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(SlideError::Domain("empty discriminator batch".into()));
        }
        for &(_, z) in batch {
            if z >= self.num_skills {
                return Err(SlideError::Domain(format!("label {z} out of range")));
            }
        }
        let trajs: Vec<&Trajectory> = batch.iter().map(|(t, _)| *t).collect();
        let fwd = self.forward(&trajs)?;
        let n = batch.len() as f64;
        let k = self.num_skills;
        let mut loss = 0.0;
        let mut d_logits = Vec::with_capacity(batch.len() * k);
        for (logits, &(_, z)) in fwd.head.output().chunks_exact(k).zip(batch) {
            let lp = log_softmax(logits);
            loss -= lp[z] / n;
            d_logits.extend(lp.iter().enumerate().map(|(i, l)| (l.exp() - if i == z { 1.0 } else { 0.0 }) / n));
        }
        let (ni, ns, nh) = (
            self.init_encoder.num_params(),
            self.step_encoder.num_params(),
            self.head.num_params(),
        );
        let mut grad = vec![0.0; ni + ns + nh];
        let (g_init, rest) = grad.split_at_mut(ni);
        let (g_step, g_head) = rest.split_at_mut(ns);
        let d_head_in = self.head.backward(&fwd.head, &d_logits, g_head, true);

        let h = self.init_encoder.output_dim();
        let total: usize = fwd.lengths.iter().sum();
        let mut d_steps = vec![0.0; total * h];
        let mut d_init = Vec::with_capacity(batch.len() * h);
        let mut row = 0;
        for (i, &len) in fwd.lengths.iter().enumerate() {
            let d_pooled = &d_head_in[i * 2 * h..i * 2 * h + h];
            for r in row..row + len {
                d_steps[r * h..(r + 1) * h]
                    .iter_mut()
                    .zip(d_pooled)
                    .for_each(|(d, p)| *d = p / len as f64);
            }
            row += len;
            d_init.extend_from_slice(&d_head_in[i * 2 * h + h..(i + 1) * 2 * h]);
        }
        self.step_encoder.backward(&fwd.steps, &d_steps, g_step, false);
        self.init_encoder.backward(&fwd.init, &d_init, g_init, false);
        Ok((loss, grad))
    }

    /// One descent step on mean `−log q(z | τ)`; returns the pre-step loss.
    pub fn train_step(&mut self, batch: &[(&Trajectory, usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(SlideError::Domain("empty discriminator batch".into()));
        }
        let mut scale = self.reward_scale.clone();
        scale.observe(batch.iter().flat_map(|(t, _)| t.rewards()));
        let previous = std::mem::replace(&mut self.reward_scale, scale);
        let (loss, grad) = match self.loss_and_gradient(batch) {
            Ok(v) => v,
            Err(e) => {
                self.reward_scale = previous;
                return Err(e);
            }
        };
        if !loss.is_finite() || !all_finite(&grad) {
            self.reward_scale = previous;
            return Err(SlideError::NonFinite("discriminator loss".into()));
        }
        let (ni, ns) = (self.init_encoder.num_params(), self.step_encoder.num_params());
        self.adams[0].step(self.init_encoder.params_mut(), &grad[..ni]);
        self.adams[1].step(self.step_encoder.params_mut(), &grad[ni..ni + ns]);
        self.adams[2].step(self.head.params_mut(), &grad[ni + ns..]);
        Ok(loss)
    }

    /// Flattened parameters in gradient order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.init_encoder.params().to_vec();
        p.extend_from_slice(self.step_encoder.params());
        p.extend_from_slice(self.head.params());
        p
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let (ni, ns) = (self.init_encoder.num_params(), self.step_encoder.num_params());
        self.init_encoder.params_mut().copy_from_slice(&params[..ni]);
        self.step_encoder.params_mut().copy_from_slice(&params[ni..ni + ns]);
        self.head.params_mut().copy_from_slice(&params[ni + ns..]);
    }

    /// `counts[true][predicted]` over a labelled set.
    pub fn confusion(&self, batch: &[(&Trajectory, usize)]) -> Result<Vec<Vec<u64>>> {
        let trajs: Vec<&Trajectory> = batch.iter().map(|(t, _)| *t).collect();
        let preds = self.predict(&trajs)?;
        let mut m = vec![vec![0u64; self.num_skills]; self.num_skills];
        for (&(_, z), p) in batch.iter().zip(preds) {
            m[z][p] += 1;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tests::rel_error;
    use crate::param_space::TaskParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const OBS: usize = 5;

    fn random_traj(rng: &mut ChaCha8Rng, skill: usize, len: usize, reward_sign: f64) -> Trajectory {
        let mut t = Trajectory::new(skill, TaskParams::new(vec![]), 0, (0..OBS).map(|_| rng.random_range(0.0..1.0)).collect());
        for _ in 0..len {
            let next: Vec<f64> = (0..OBS).map(|_| rng.random_range(0.0..1.0)).collect();
            let r = reward_sign * rng.random_range(0.01..0.1);
            t.push(vec![rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)], r, next);
        }
        t
    }

    fn disc(k: usize, seed: u64) -> Discriminator {
        Discriminator::new(k, OBS, 2, &DiscriminatorConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn posterior_normalized_and_near_uniform_at_init() {
        let d = disc(4, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t = random_traj(&mut rng, 0, 20, 1.0);
            let lp = d.log_posterior(&t).unwrap();
            let total: f64 = lp.iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-6);
            let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((max + 4f64.ln()).abs() < 0.5);
        }
    }

    #[test]
    fn single_skill_posterior_is_exactly_zero() {
        let d = disc(1, 0);
        let t = random_traj(&mut ChaCha8Rng::seed_from_u64(2), 0, 3, 1.0);
        assert_eq!(d.log_posterior(&t).unwrap(), vec![0.0]);
    }

    #[test]
    fn pooling_is_permutation_invariant() {
        let d = disc(3, 3);
        let t = random_traj(&mut ChaCha8Rng::seed_from_u64(4), 1, 7, 1.0);
        let mut shuffled = t.clone();
        shuffled.transitions.reverse();
        shuffled.transitions.swap(0, 3);
        let (a, b) = (d.log_posterior(&t).unwrap(), d.log_posterior(&shuffled).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_and_length_one_trajectories() {
        let d = disc(3, 5);
        let empty = Trajectory::new(0, TaskParams::new(vec![]), 0, vec![0.0; OBS]);
        assert!(matches!(d.log_posterior(&empty), Err(SlideError::Domain(_))));
        let one = random_traj(&mut ChaCha8Rng::seed_from_u64(6), 0, 1, 1.0);
        assert!(d.log_posterior(&one).unwrap().iter().all(|l| l.is_finite()));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut d = disc(3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let trajs: Vec<Trajectory> = (0..4).map(|i| random_traj(&mut rng, i % 3, 2 + i, 1.0)).collect();
        let batch: Vec<(&Trajectory, usize)> = trajs.iter().map(|t| (t, t.skill)).collect();
        let (_, analytic) = d.loss_and_gradient(&batch).unwrap();
        let params = d.parameters();
        let h = 1e-6;
        let mut fd = vec![0.0; params.len()];
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            d.set_parameters(&p);
            let lp = d.loss_and_gradient(&batch).unwrap().0;
            p[i] -= 2.0 * h;
            d.set_parameters(&p);
            let lm = d.loss_and_gradient(&batch).unwrap().0;
            fd[i] = (lp - lm) / (2.0 * h);
        }
        d.set_parameters(&params);
        let err = rel_error(&analytic, &fd);
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn memorizes_a_single_sample() {
        let mut d = disc(4, 9);
        let t = random_traj(&mut ChaCha8Rng::seed_from_u64(10), 2, 20, 1.0);
        let batch = vec![(&t, 2usize); 8];
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let loss = d.train_step(&batch).unwrap();
            assert!(loss < last, "loss did not decrease: {loss} ≥ {last}");
            last = loss;
        }
        let final_loss = d.loss_and_gradient(&batch).unwrap().0;
        assert!(final_loss < 0.05, "final loss {final_loss}");
    }

    #[test]
    fn shuffled_labels_plateau_at_log_k() {
        let k = 4;
        let mut d = disc(k, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let trajs: Vec<Trajectory> = (0..4000).map(|_| random_traj(&mut rng, 0, 5, 1.0)).collect();
        let mut losses = Vec::new();
        for step in 0..1500 {
            let batch: Vec<(&Trajectory, usize)> = (0..32)
                .map(|_| (&trajs[rng.random_range(0..trajs.len())], rng.random_range(0..k)))
                .collect();
            let loss = d.train_step(&batch).unwrap();
            if step >= 1000 {
                losses.push(loss);
            }
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        assert!((mean - (k as f64).ln()).abs() < 0.1, "plateau {mean}");
    }

    #[test]
    fn reward_sign_alone_separates_skills() {
        let mut d = disc(2, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let make = |rng: &mut ChaCha8Rng, z: usize| random_traj(rng, z, 10, if z == 0 { 1.0 } else { -1.0 });
        for _ in 0..600 {
            let trajs: Vec<Trajectory> = (0..16).map(|i| make(&mut rng, i % 2)).collect();
            let batch: Vec<(&Trajectory, usize)> = trajs.iter().map(|t| (t, t.skill)).collect();
            d.train_step(&batch).unwrap();
        }
        let held_out: Vec<Trajectory> = (0..400).map(|i| make(&mut rng, i % 2)).collect();
        let refs: Vec<&Trajectory> = held_out.iter().collect();
        let preds = d.predict(&refs).unwrap();
        let acc = preds.iter().zip(&held_out).filter(|(p, t)| **p == t.skill).count() as f64 / 400.0;
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn bad_labels_rejected() {
        let mut d = disc(2, 15);
        let t = random_traj(&mut ChaCha8Rng::seed_from_u64(16), 0, 3, 1.0);
        assert!(matches!(d.train_step(&[(&t, 2)]), Err(SlideError::Domain(_))));
        assert!(d.train_step(&[]).is_err());
    }
}
