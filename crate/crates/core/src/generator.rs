//! Skill-conditioned task generator `g(w | z; θ_g)`.
//!
//! A small network maps one-hot(z) to the concatenated head parameters of
//! a [`FactorizedDistribution`]. It is trained by a score-function
//! estimator on `score − b(z)` (score = log q(z|τ) + discounted return),
//! plus `α` times the analytic mean entropy over all skills.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlideError};
use crate::nn::{all_finite, Activation, Adam, AdamConfig, Mlp};
use crate::param_space::{FactorizedDistribution, Head, ParamKind, TaskParamSpec, TaskParams, LOG_STD_BOUNDS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub hidden: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// EMA decay of the per-skill score baseline and scale.
    pub baseline_decay: f64,
    /// Divide centered scores by a running per-skill standard deviation.
    pub normalize_scores: bool,
    /// Trajectories accumulated per generator step.
    pub batch_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            hidden: 64,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            baseline_decay: 0.99,
            normalize_scores: false,
            batch_size: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }
}

/// One `(z, w)` pair with the two score components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSample {
    pub skill: usize,
    pub params: TaskParams,
    pub log_q: f64,
    pub discounted_return: f64,
}

impl GeneratorSample {
    pub fn score(&self) -> f64 {
        self.log_q + self.discounted_return
    }
}

/// Loss components of one generator step (all measured before the step).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorReport {
    pub log_q_mean: f64,
    pub entropy_mean: f64,
    pub return_mean: f64,
}

/// Score-function coefficient `c` on `log g(w | z)`.
#[derive(Clone, Debug)]
pub struct WeightedSample<'a> {
    pub skill: usize,
    pub params: &'a TaskParams,
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Generator {
    spec: TaskParamSpec,
    num_skills: usize,
    net: Mlp,
    adam: Adam,
    config: GeneratorConfig,
    baselines: Vec<f64>,
    score_vars: Vec<f64>,
    score_counts: Vec<u64>,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        spec: &TaskParamSpec,
        num_skills: usize,
        config: GeneratorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if num_skills == 0 {
            return Err(SlideError::config("num_skills", "must be at least 1"));
        }
        let net = Mlp::new(
            &[num_skills, config.hidden, config.hidden, spec.head_arity()],
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        Ok(Generator {
            spec: spec.clone(),
            num_skills,
            adam: Adam::new(net.num_params(), config.adam()),
            net,
            config,
            baselines: vec![0.0; num_skills],
            score_vars: vec![1.0; num_skills],
            score_counts: vec![0; num_skills],
        })
    }

    pub fn spec(&self) -> &TaskParamSpec {
        &self.spec
    }

    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn baseline(&self, skill: usize) -> f64 {
        self.baselines[skill]
    }

    fn check_skill(&self, skill: usize) -> Result<()> {
        if skill >= self.num_skills {
            return Err(SlideError::Domain(format!(
                "skill {skill} out of range for {} skills",
                self.num_skills
            )));
        }
        Ok(())
    }

    fn identity_input(&self) -> Vec<f64> {
        let k = self.num_skills;
        (0..k * k).map(|i| if i / k == i % k { 1.0 } else { 0.0 }).collect()
    }

    fn heads_from_raw(&self, raw: &[f64]) -> Vec<Head> {
        let mut off = 0;
        self.spec
            .params()
            .iter()
            .map(|p| {
                let n = p.head_arity();
                let slice = &raw[off..off + n];
                off += n;
                match p.kind {
                    ParamKind::Discrete { .. } => Head::Categorical { logits: slice.to_vec() },
                    ParamKind::Continuous { .. } => Head::Gaussian {
                        mean: slice[0],
                        log_std: slice[1],
                    },
                }
            })
            .collect()
    }

    /// Zeroes ascent directions that would push a clamped log-std further
    /// outside its bounds.
    fn mask_clamped(&self, raw: &[f64], grad: &mut [f64]) {
        let (lo, hi) = LOG_STD_BOUNDS;
        let mut off = 0;
        for p in self.spec.params() {
            if let ParamKind::Continuous { .. } = p.kind {
                let ls = raw[off + 1];
                let g = &mut grad[off + 1];
                if (ls > hi && *g > 0.0) || (ls < lo && *g < 0.0) {
                    *g = 0.0;
                }
            }
            off += p.head_arity();
        }
    }

    fn distribution_from_raw(&self, raw: &[f64]) -> Result<FactorizedDistribution> {
        FactorizedDistribution::new(&self.spec, self.heads_from_raw(raw))
    }

    pub fn distribution_for(&self, skill: usize) -> Result<FactorizedDistribution> {
        self.check_skill(skill)?;
        let mut input = vec![0.0; self.num_skills];
        input[skill] = 1.0;
        let raw = self.net.predict(&input, 1);
        self.distribution_from_raw(&raw)
    }

    /// Distributions for every skill from one batched forward pass.
    pub fn all_distributions(&self) -> Result<Vec<FactorizedDistribution>> {
        let raw = self.net.predict(&self.identity_input(), self.num_skills);
        raw.chunks_exact(self.spec.head_arity().max(1))
            .take(self.num_skills)
            .map(|r| self.distribution_from_raw(r))
            .collect::<Result<Vec<_>>>()
            .map(|mut v| {
                // Empty specs have zero head arity; every skill shares one
                // empty distribution.
                while v.len() < self.num_skills {
                    v.push(FactorizedDistribution::new(&self.spec, vec![]).expect("empty spec"));
                }
                v
            })
    }

    /// Mean analytic entropy `H(w | z)` over all skills.
    pub fn mean_entropy(&self) -> Result<f64> {
        let dists = self.all_distributions()?;
        Ok(dists.iter().map(FactorizedDistribution::entropy).sum::<f64>() / self.num_skills as f64)
    }

    /// ∇θ of `Σ_i c_i · log g(w_i | z_i) + entropy_weight · mean_z H(g(·|z))`.
    pub fn objective_gradient(&self, samples: &[WeightedSample<'_>], entropy_weight: f64) -> Result<Vec<f64>> {
        let k = self.num_skills;
        let arity = self.spec.head_arity();
        let input = self.identity_input();
        let cache = self.net.forward(&input, k);
        let raw = cache.output().to_vec();
        let dists: Vec<FactorizedDistribution> = (0..k)
            .map(|z| self.distribution_from_raw(&raw[z * arity..(z + 1) * arity]))
            .collect::<Result<_>>()?;
        let mut d_out = vec![0.0; k * arity];
        for s in samples {
            self.check_skill(s.skill)?;
            let g = dists[s.skill].log_prob_grad(s.params)?;
            let row = &mut d_out[s.skill * arity..(s.skill + 1) * arity];
            row.iter_mut().zip(&g).for_each(|(d, gi)| *d += s.weight * gi);
        }
        if entropy_weight != 0.0 {
            for (z, dist) in dists.iter().enumerate() {
                let g = dist.entropy_grad();
                let row = &mut d_out[z * arity..(z + 1) * arity];
                row.iter_mut()
                    .zip(&g)
                    .for_each(|(d, gi)| *d += entropy_weight / k as f64 * gi);
            }
        }
        for z in 0..k {
            let (r, d) = (&raw[z * arity..(z + 1) * arity], &mut d_out[z * arity..(z + 1) * arity]);
            self.mask_clamped(r, d);
        }
        let mut grad = vec![0.0; self.net.num_params()];
        self.net.backward(&cache, &d_out, &mut grad, false);
        Ok(grad)
    }

    /// One ascent step on the centered score-function surrogate plus
    /// `alpha` times the mean entropy.
    pub fn update(&mut self, batch: &[GeneratorSample], alpha: f64) -> Result<GeneratorReport> {
        if batch.is_empty() {
            return Err(SlideError::Domain("empty generator batch".into()));
        }
        if !(alpha >= 0.0) {
            return Err(SlideError::Domain(format!("alpha must be non-negative, got {alpha}")));
        }
        for s in batch {
            self.check_skill(s.skill)?;
            if !s.score().is_finite() {
                return Err(SlideError::NonFinite(format!("generator score for skill {}", s.skill)));
            }
        }
        let n = batch.len() as f64;
        let report = GeneratorReport {
            log_q_mean: batch.iter().map(|s| s.log_q).sum::<f64>() / n,
            entropy_mean: self.mean_entropy()?,
            return_mean: batch.iter().map(|s| s.discounted_return).sum::<f64>() / n,
        };

        let decay = self.config.baseline_decay;
        let mut weights = Vec::with_capacity(batch.len());
        for s in batch {
            let z = s.skill;
            let score = s.score();
            if self.score_counts[z] == 0 {
                self.baselines[z] = score;
            }
            let centered = score - self.baselines[z];
            let adv = if self.config.normalize_scores {
                centered / (self.score_vars[z].sqrt() + 1e-6)
            } else {
                centered
            };
            weights.push(adv / n);
            if self.score_counts[z] > 0 {
                self.score_vars[z] = decay * self.score_vars[z] + (1.0 - decay) * centered * centered;
            }
            self.baselines[z] = decay * self.baselines[z] + (1.0 - decay) * score;
            self.score_counts[z] += 1;
        }
        let samples: Vec<WeightedSample<'_>> = batch
            .iter()
            .zip(&weights)
            .map(|(s, &w)| WeightedSample {
                skill: s.skill,
                params: &s.params,
                weight: w,
            })
            .collect();
        let grad = self.objective_gradient(&samples, alpha)?;
        if !all_finite(&grad) {
            return Err(SlideError::NonFinite("generator gradient".into()));
        }
        let ascent: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.adam.step(self.net.params_mut(), &ascent);
        Ok(report)
    }
}
