//! The discovery loop: per iteration sample a skill, generate a task,
//! roll the skill out with interleaved SAC updates, score the trajectory
//! with the discriminator, then update the discriminator, the generator
//! and the diversity weight `α`, in that order.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::StateClassifier;
use crate::checkpoint;
use crate::config::{Config, Method, WorldConfig};
use crate::discriminator::Discriminator;
use crate::env::{Environment, Trajectory};
use crate::error::{Result, SlideError};
use crate::generator::{Generator, GeneratorSample};
use crate::param_space::{uniform_distribution, FactorizedDistribution, TaskParams};
use crate::seed::derive_rng;
use crate::skill_policy::{ActMode, ReplayBuffer, SacReport, SkillPolicy};

pub const LOG_ALPHA_BOUNDS: (f64, f64) = (-10.0, 5.0);
pub const STATE_CHECKPOINT: &str = "state.ckpt";
pub const SKILLS_CHECKPOINT: &str = "skills.ckpt";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SAC_METRICS_CSV: &str = "sac_metrics.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const METRICS_HEADER: &str = "iteration,mi_lower_bound,mean_entropy,alpha,mean_return,disc_accuracy";

/// `α` (stored as `log α`) and its target entropy `H̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityState {
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub lr: f64,
    pub last_entropy: Option<f64>,
}

impl DiversityState {
    pub fn new(initial_alpha: f64, target_entropy: f64, lr: f64) -> Result<Self> {
        if !(initial_alpha > 0.0) || !initial_alpha.is_finite() {
            return Err(SlideError::Domain(format!("alpha must be positive, got {initial_alpha}")));
        }
        Ok(DiversityState {
            log_alpha: initial_alpha.ln().clamp(LOG_ALPHA_BOUNDS.0, LOG_ALPHA_BOUNDS.1),
            target_entropy,
            lr,
            last_entropy: None,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

/// One dual step `log α ← log α − lr·(H − H̄)`; returns the new `α`.
pub fn update_alpha(state: &mut DiversityState, measured_entropy: f64) -> f64 {
    if measured_entropy.is_finite() {
        let step = state.lr * (measured_entropy - state.target_entropy);
        state.log_alpha = (state.log_alpha - step).clamp(LOG_ALPHA_BOUNDS.0, LOG_ALPHA_BOUNDS.1);
        state.last_entropy = Some(measured_entropy);
    }
    state.alpha()
}

/// The three terms of the objective and their weighted sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub log_q: f64,
    pub entropy: f64,
    pub discounted_return: f64,
    pub alpha: f64,
    pub value: f64,
}

/// `J = mean log q(z|τ) + α·mean H(w|z) + mean Σ_t γ^t r_t` over a batch.
pub fn compute_objective(
    batch: &[Trajectory],
    mut log_q: impl FnMut(&Trajectory) -> Result<f64>,
    mut entropy: impl FnMut(usize) -> Result<f64>,
    alpha: f64,
    gamma: f64,
) -> Result<Objective> {
    if batch.is_empty() {
        return Err(SlideError::Domain("empty trajectory batch".into()));
    }
    let n = batch.len() as f64;
    let (mut lq, mut h, mut ret) = (0.0, 0.0, 0.0);
    for t in batch {
        lq += log_q(t)? / n;
        h += entropy(t.skill)? / n;
        ret += t.discounted_return(gamma) / n;
    }
    Ok(Objective {
        log_q: lq,
        entropy: h,
        discounted_return: ret,
        alpha,
        value: lq + alpha * h + ret,
    })
}

/// Where tasks come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TaskSource {
    Learned(Generator),
    Uniform(FactorizedDistribution),
}

impl TaskSource {
    pub fn distribution(&self, skill: usize) -> Result<FactorizedDistribution> {
        match self {
            TaskSource::Learned(g) => g.distribution_for(skill),
            TaskSource::Uniform(d) => Ok(d.clone()),
        }
    }

    pub fn mean_entropy(&self) -> Result<f64> {
        match self {
            TaskSource::Learned(g) => g.mean_entropy(),
            TaskSource::Uniform(d) => Ok(d.entropy()),
        }
    }

    pub fn generator(&self) -> Option<&Generator> {
        match self {
            TaskSource::Learned(g) => Some(g),
            TaskSource::Uniform(_) => None,
        }
    }
}

/// Loop phases, recorded when a trace is requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    SampleSkill,
    GenerateTask,
    Instantiate,
    Act,
    EnvStep,
    SacUpdate,
    LogPosterior,
    DiscriminatorUpdate,
    GeneratorUpdate,
    AlphaUpdate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub mi_lower_bound: f64,
    pub mean_entropy: f64,
    pub alpha: f64,
    pub mean_return: f64,
    pub disc_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacMetricsRow {
    pub iteration: u64,
    pub updates: u64,
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
    pub sac_temp: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Window {
    log_q: f64,
    returns: f64,
    correct: u64,
    count: u64,
    sac: SacReport,
    sac_count: u64,
    confusion: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Rngs {
    task: ChaCha8Rng,
    rollout: ChaCha8Rng,
    sac: ChaCha8Rng,
    discriminator: ChaCha8Rng,
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryState {
    #[serde(with = "crate::config::toml_string")]
    pub config: Config,
    pub iteration: u64,
    pub env_steps: u64,
    pub tasks: TaskSource,
    pub discriminator: Discriminator,
    pub policy: SkillPolicy,
    pub diversity: DiversityState,
    pub metrics: Vec<MetricsRow>,
    pub sac_metrics: Vec<SacMetricsRow>,
    pub last_confusion: Vec<Vec<u64>>,
    pub stopped_early: bool,
    replay: ReplayBuffer,
    trajectories: VecDeque<Trajectory>,
    pending: Vec<GeneratorSample>,
    state_classifier: Option<StateClassifier>,
    rngs: Rngs,
    window: Window,
    best_mi: f64,
    stale_rows: u64,
}

/// Discovered skills and the models that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillSet {
    pub method: Method,
    #[serde(with = "crate::config::toml_string")]
    pub world: WorldConfig,
    pub num_skills: usize,
    pub policy: SkillPolicy,
    pub discriminator: Discriminator,
    pub tasks: TaskSource,
}

impl SkillSet {
    pub fn save(&self, path: &Path, fingerprint: &str) -> Result<()> {
        checkpoint::save(path, "skills", fingerprint, self)
    }

    pub fn load(path: &Path, fingerprint: Option<&str>) -> Result<SkillSet> {
        checkpoint::load(path, "skills", fingerprint)
    }
}

#[derive(Debug)]
pub struct DiscoveryOutcome {
    pub metrics: Vec<MetricsRow>,
    pub skills: SkillSet,
    pub iterations: u64,
    pub stopped_early: bool,
    pub out_files: Vec<PathBuf>,
}

pub struct DiscoveryRun {
    state: DiscoveryState,
    env: Box<dyn Environment>,
    fingerprint: String,
}

impl DiscoveryRun {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let env = config.world.build()?;
        let k = config.discovery.num_skills;
        let seed = config.seed;
        let spec = env.param_spec().clone();
        let tasks = match config.discovery.method {
            Method::Slide => TaskSource::Learned(Generator::new(
                &spec,
                k,
                config.generator.clone(),
                &mut derive_rng(seed, "init:generator", 0),
            )?),
            Method::UniformTasks | Method::NextStateDiscriminator => TaskSource::Uniform(uniform_distribution(&spec)),
        };
        let discriminator = Discriminator::new(
            k,
            env.obs_dim(),
            env.action_dim(),
            &config.discriminator,
            &mut derive_rng(seed, "init:discriminator", 0),
        )?;
        let policy = SkillPolicy::new(
            env.obs_dim(),
            env.action_dim(),
            k,
            env.max_action(),
            config.sac.clone(),
            &mut derive_rng(seed, "init:skill_policy", 0),
        )?;
        let state_classifier = (config.discovery.method == Method::NextStateDiscriminator).then(|| {
            StateClassifier::new(
                env.obs_dim(),
                k,
                config.discriminator.hidden,
                config.discriminator.adam(),
                &mut derive_rng(seed, "init:state_classifier", 0),
            )
        });
        let d = &config.discovery;
        let diversity = DiversityState::new(d.initial_alpha, d.target_entropy, d.alpha_lr)?;
        let state = DiscoveryState {
            iteration: 0,
            env_steps: 0,
            tasks,
            discriminator,
            policy,
            diversity,
            metrics: Vec::new(),
            sac_metrics: Vec::new(),
            last_confusion: vec![vec![0; k]; k],
            stopped_early: false,
            replay: ReplayBuffer::new(config.sac.replay_capacity),
            trajectories: VecDeque::new(),
            pending: Vec::new(),
            state_classifier,
            rngs: Rngs {
                task: derive_rng(seed, "task_sampling", 0),
                rollout: derive_rng(seed, "rollout", 0),
                sac: derive_rng(seed, "sac", 0),
                discriminator: derive_rng(seed, "discriminator", 0),
            },
            window: Window {
                confusion: vec![vec![0; k]; k],
                ..Window::default()
            },
            best_mi: f64::NEG_INFINITY,
            stale_rows: 0,
            config,
        };
        Ok(DiscoveryRun {
            fingerprint: spec.fingerprint(),
            state,
            env,
        })
    }

    /// Continues from a state checkpoint.
    pub fn resume(path: &Path) -> Result<Self> {
        let state: DiscoveryState = checkpoint::load(path, "discovery_state", None)?;
        let env = state.config.world.build()?;
        let fingerprint = env.param_spec().fingerprint();
        let (header, _) = checkpoint::read_header(&fs::read(path)?)?;
        if header.fingerprint != fingerprint {
            return Err(SlideError::Checkpoint("task-space fingerprint mismatch".into()));
        }
        Ok(DiscoveryRun { state, env, fingerprint })
    }

    pub fn state(&self) -> &DiscoveryState {
        &self.state
    }

    pub fn env_mut(&mut self) -> &mut dyn Environment {
        self.env.as_mut()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn is_finished(&self) -> bool {
        self.state.stopped_early || self.state.iteration >= self.state.config.discovery.iterations
    }

    pub fn skills(&self) -> SkillSet {
        let s = &self.state;
        SkillSet {
            method: s.config.discovery.method,
            world: s.config.world.clone(),
            num_skills: s.config.discovery.num_skills,
            policy: s.policy.clone(),
            discriminator: s.discriminator.clone(),
            tasks: s.tasks.clone(),
        }
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, "discovery_state", &self.fingerprint, &self.state)
    }

    /// One loop iteration; `trace` receives the phases in execution order.
    pub fn step(&mut self, mut trace: Option<&mut Vec<Phase>>) -> Result<()> {
        let iteration = self.state.iteration;
        self.iterate(&mut trace).map_err(|e| e.at_iteration(iteration))
    }

    fn iterate(&mut self, trace: &mut Option<&mut Vec<Phase>>) -> Result<()> {
        let mut mark = |p: Phase| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(p);
            }
        };
        let s = &mut self.state;
        let cfg = &s.config;
        let k = cfg.discovery.num_skills;

        mark(Phase::SampleSkill);
        let z = s.rngs.task.random_range(0..k);
        mark(Phase::GenerateTask);
        let w = s.tasks.distribution(z)?.sample(&mut s.rngs.task);

        mark(Phase::Instantiate);
        let episode_seed: u64 = s.rngs.rollout.random();
        let obs = self.env.reset(&w, episode_seed)?;
        let mut traj = Trajectory::new(z, w, episode_seed, obs);
        for _ in 0..self.env.horizon() {
            mark(Phase::Act);
            let obs = traj.last_obs().to_vec();
            let action = s.policy.act(&obs, z, ActMode::Stochastic, &mut s.rngs.rollout)?;
            mark(Phase::EnvStep);
            let step = self.env.step(&action)?;
            // Time-limit truncation is not a terminal state.
            let record = s.policy.make_record(&obs, z, &step.applied_action, step.reward, &step.observation, false);
            s.replay.push(record);
            traj.push(step.applied_action, step.reward, step.observation);
            s.env_steps += 1;
            if s.env_steps.is_multiple_of(cfg.sac.update_every as u64) && s.replay.len() >= cfg.sac.batch_size {
                mark(Phase::SacUpdate);
                let report = match &mut s.state_classifier {
                    None => s.policy.update_from_buffer(&s.replay, &mut s.rngs.sac)?,
                    Some(classifier) => {
                        let batch = s.replay.sample(cfg.sac.batch_size, &mut s.rngs.sac)?;
                        let rows: Vec<(&[f64], usize)> = batch.iter().map(|r| (r.next_obs.as_slice(), r.skill)).collect();
                        let rewards = classifier.intrinsic_rewards(&rows);
                        classifier.train_step(&rows)?;
                        let relabelled: Vec<_> = batch
                            .iter()
                            .zip(rewards)
                            .map(|(r, reward)| crate::skill_policy::Record { reward, ..(*r).clone() })
                            .collect();
                        let refs: Vec<_> = relabelled.iter().collect();
                        s.policy.update_batch(&refs, &mut s.rngs.sac)?
                    }
                };
                let w = &mut s.window;
                w.sac.critic1_loss += report.critic1_loss;
                w.sac.critic2_loss += report.critic2_loss;
                w.sac.actor_loss += report.actor_loss;
                w.sac.sac_temp = report.sac_temp;
                w.sac.entropy += report.entropy;
                w.sac_count += 1;
            }
            if self.env.horizon() == traj.len() {
                break;
            }
        }

        mark(Phase::LogPosterior);
        let log_post = s.discriminator.log_posterior(&traj)?;
        let log_q = log_post[z];
        let predicted = (0..k).fold(0, |b, i| if log_post[i] > log_post[b] { i } else { b });
        let ret = traj.undiscounted_return();
        let discounted = traj.discounted_return(cfg.discovery.gamma);
        s.window.log_q += log_q;
        s.window.returns += ret;
        s.window.correct += (predicted == z) as u64;
        s.window.count += 1;
        s.window.confusion[z][predicted] += 1;

        mark(Phase::DiscriminatorUpdate);
        let params = traj.params.clone();
        s.trajectories.push_back(traj);
        while s.trajectories.len() > cfg.discriminator.buffer_capacity {
            s.trajectories.pop_front();
        }
        let n = cfg.discriminator.batch_size.min(s.trajectories.len());
        let picks = index::sample(&mut s.rngs.discriminator, s.trajectories.len(), n);
        let batch: Vec<(&Trajectory, usize)> = picks
            .iter()
            .map(|i| (&s.trajectories[i], s.trajectories[i].skill))
            .collect();
        s.discriminator.train_step(&batch)?;

        if let TaskSource::Learned(generator) = &mut s.tasks {
            s.pending.push(GeneratorSample {
                skill: z,
                params,
                log_q,
                discounted_return: discounted,
            });
            if s.pending.len() >= cfg.generator.batch_size {
                mark(Phase::GeneratorUpdate);
                generator.update(&s.pending, s.diversity.alpha())?;
                s.pending.clear();
            }
            mark(Phase::AlphaUpdate);
            update_alpha(&mut s.diversity, generator.mean_entropy()?);
        }

        s.iteration += 1;
        if s.iteration.is_multiple_of(cfg.discovery.eval_every) {
            self.emit_row()?;
        }
        Ok(())
    }

    fn emit_row(&mut self) -> Result<()> {
        let s = &mut self.state;
        let k = s.config.discovery.num_skills;
        let w = std::mem::replace(
            &mut s.window,
            Window {
                confusion: vec![vec![0; k]; k],
                ..Window::default()
            },
        );
        if w.count == 0 {
            return Ok(());
        }
        let n = w.count as f64;
        let row = MetricsRow {
            iteration: s.iteration,
            mi_lower_bound: w.log_q / n + (k as f64).ln(),
            mean_entropy: s.tasks.mean_entropy()?,
            alpha: s.diversity.alpha(),
            mean_return: w.returns / n,
            disc_accuracy: w.correct as f64 / n,
        };
        if w.sac_count > 0 {
            let m = w.sac_count as f64;
            s.sac_metrics.push(SacMetricsRow {
                iteration: s.iteration,
                updates: s.policy.updates(),
                critic1_loss: w.sac.critic1_loss / m,
                critic2_loss: w.sac.critic2_loss / m,
                actor_loss: w.sac.actor_loss / m,
                sac_temp: w.sac.sac_temp,
                entropy: w.sac.entropy / m,
            });
        }
        s.last_confusion = w.confusion;
        let d = &s.config.discovery;
        if d.early_stop_patience > 0 {
            if row.mi_lower_bound > s.best_mi + d.early_stop_min_delta {
                s.best_mi = row.mi_lower_bound;
                s.stale_rows = 0;
            } else {
                s.stale_rows += 1;
                if s.stale_rows >= d.early_stop_patience {
                    s.stopped_early = true;
                }
            }
        }
        s.metrics.push(row);
        Ok(())
    }

    /// Runs to completion (or early stop), writing artifacts to `out_dir`.
    pub fn run(self, out_dir: Option<&Path>) -> Result<DiscoveryOutcome> {
        self.run_with_progress(out_dir, |_| {})
    }

    /// [`Self::run`], calling `on_row` for every metrics row as it is emitted.
    pub fn run_with_progress(
        mut self,
        out_dir: Option<&Path>,
        mut on_row: impl FnMut(&MetricsRow),
    ) -> Result<DiscoveryOutcome> {
        let every = self.state.config.discovery.checkpoint_every;
        while !self.is_finished() {
            let rows = self.state.metrics.len();
            self.step(None)?;
            if let Some(row) = self.state.metrics.get(rows) {
                on_row(row);
            }
            if let Some(dir) = out_dir {
                if every > 0 && self.state.iteration.is_multiple_of(every) {
                    self.write_outputs(dir)?;
                    self.save_state(&dir.join(STATE_CHECKPOINT))?;
                }
            }
        }
        let mut out_files = Vec::new();
        if let Some(dir) = out_dir {
            out_files = self.write_outputs(dir)?;
            self.save_state(&dir.join(STATE_CHECKPOINT))?;
            self.skills().save(&dir.join(SKILLS_CHECKPOINT), &self.fingerprint)?;
            out_files.push(dir.join(STATE_CHECKPOINT));
            out_files.push(dir.join(SKILLS_CHECKPOINT));
        }
        Ok(DiscoveryOutcome {
            metrics: self.state.metrics.clone(),
            skills: self.skills(),
            iterations: self.state.iteration,
            stopped_early: self.state.stopped_early,
            out_files,
        })
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let s = &self.state;
        let metrics = dir.join(METRICS_CSV);
        checkpoint::write_atomic(&metrics, metrics_csv(&s.metrics).as_bytes())?;
        let mut sac = String::from("iteration,updates,critic1_loss,critic2_loss,actor_loss,sac_temp,entropy\n");
        for r in &s.sac_metrics {
            let _ = writeln!(
                sac,
                "{},{},{},{},{},{},{}",
                r.iteration, r.updates, r.critic1_loss, r.critic2_loss, r.actor_loss, r.sac_temp, r.entropy
            );
        }
        let sac_path = dir.join(SAC_METRICS_CSV);
        checkpoint::write_atomic(&sac_path, sac.as_bytes())?;
        let k = s.config.discovery.num_skills;
        let mut conf = String::from("true_skill");
        for j in 0..k {
            let _ = write!(conf, ",pred_{j}");
        }
        conf.push('\n');
        for (i, row) in s.last_confusion.iter().enumerate() {
            let _ = write!(conf, "{i}");
            for c in row {
                let _ = write!(conf, ",{c}");
            }
            conf.push('\n');
        }
        let conf_path = dir.join(CONFUSION_CSV);
        checkpoint::write_atomic(&conf_path, conf.as_bytes())?;
        Ok(vec![metrics, sac_path, conf_path])
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration, r.mi_lower_bound, r.mean_entropy, r.alpha, r.mean_return, r.disc_accuracy
        );
    }
    out
}

/// Convenience wrapper: build, run, and write artifacts.
pub fn run_discovery(config: Config, out_dir: Option<&Path>) -> Result<DiscoveryOutcome> {
    DiscoveryRun::new(config)?.run(out_dir)
}

/// Rolls each skill out on tasks from its own distribution and reports
/// held-out discriminator accuracy.
pub fn heldout_accuracy<R: Rng + ?Sized>(
    env: &mut dyn Environment,
    skills: &SkillSet,
    per_skill: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for z in 0..skills.num_skills {
        let dist = skills.tasks.distribution(z)?;
        for _ in 0..per_skill {
            let w: TaskParams = dist.sample(rng);
            let seed: u64 = rng.random();
            let traj = crate::env::rollout(env, z, &w, seed, |o| skills.policy.act(o, z, ActMode::Stochastic, rng))?;
            let lp = skills.discriminator.log_posterior(&traj)?;
            let pred = (0..lp.len()).fold(0, |b, i| if lp[i] > lp[b] { i } else { b });
            correct += (pred == z) as usize;
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::param_space::TaskParams;

    /// A small ModeWorld configuration for fast loop tests.
    pub(crate) fn toy_config(num_skills: usize, iterations: u64) -> Config {
        let mut c = Config::default_config();
        c.world = WorldConfig::ModeWorld { modes: 2, horizon: 4, point_mass: false };
        c.transfer.target_params = vec![0.0];
        let d = &mut c.discovery;
        d.num_skills = num_skills;
        d.iterations = iterations;
        d.eval_every = 10;
        d.checkpoint_every = 0;
        d.target_entropy = 0.0;
        d.alpha_lr = 0.01;
        c.generator.hidden = 16;
        c.discriminator.hidden = 16;
        c.discriminator.batch_size = 16;
        c.sac.hidden = 16;
        c.sac.batch_size = 16;
        c.sac.update_every = 4;
        c
    }

    #[test]
    fn alpha_direction_and_fixed_point() {
        let mut s = DiversityState::new(0.5, 3.0, 0.1).unwrap();
        assert_eq!(update_alpha(&mut s, 3.0), 0.5f64.ln().exp());
        let before = s.alpha();
        assert!(update_alpha(&mut s, 2.0) > before);
        let before = s.alpha();
        assert!(update_alpha(&mut s, 4.0) < before);
        for _ in 0..10_000 {
            update_alpha(&mut s, 1e6);
        }
        assert!(s.alpha() > 0.0 && s.log_alpha == LOG_ALPHA_BOUNDS.0);
        for _ in 0..10_000 {
            update_alpha(&mut s, -1e6);
        }
        assert_eq!(s.log_alpha, LOG_ALPHA_BOUNDS.1);
        assert!(DiversityState::new(0.0, 3.0, 0.1).is_err());
    }

    fn constant_traj(skill: usize, steps: usize, reward: f64) -> Trajectory {
        let mut t = Trajectory::new(skill, TaskParams::new(vec![0.0]), 0, vec![0.0]);
        for _ in 0..steps {
            t.push(vec![0.0], reward, vec![0.0]);
        }
        t
    }

    #[test]
    fn objective_terms() {
        let batch = vec![constant_traj(0, 20, 0.01), constant_traj(1, 20, 0.01)];
        let j = compute_objective(&batch, |_| Ok(-0.3), |_| Ok(1.5), 0.0, 1.0).unwrap();
        assert!((j.discounted_return - 0.2).abs() < 1e-12);
        assert!((j.value - (-0.3 + 0.2)).abs() < 1e-12);

        let zero = vec![constant_traj(0, 5, 0.0), constant_traj(3, 5, 0.0)];
        let k = 4f64;
        let j = compute_objective(&zero, |_| Ok(-k.ln()), |_| Ok(2.0), 0.7, 0.99).unwrap();
        assert!((j.value - (-k.ln() + 0.7 * 2.0)).abs() < 1e-12);
        assert!(compute_objective(&[], |_| Ok(0.0), |_| Ok(0.0), 1.0, 1.0).is_err());
    }

    #[test]
    fn single_skill_bound_is_exactly_zero() {
        let out = run_discovery(toy_config(1, 40), None).unwrap();
        assert_eq!(out.metrics.len(), 4);
        for row in &out.metrics {
            assert_eq!(row.mi_lower_bound, 0.0);
            assert_eq!(row.disc_accuracy, 1.0);
        }
    }

    #[test]
    fn one_iteration_follows_loop_order() {
        let mut c = toy_config(2, 10);
        c.sac.batch_size = 4;
        c.sac.update_every = 2;
        let mut run = DiscoveryRun::new(c).unwrap();
        // Fill the replay buffer so the traced iteration performs SAC updates.
        run.step(None).unwrap();
        let mut trace = Vec::new();
        run.step(Some(&mut trace)).unwrap();
        use Phase::*;
        let expected = vec![
            SampleSkill, GenerateTask, Instantiate,
            Act, EnvStep, Act, EnvStep, SacUpdate, Act, EnvStep, Act, EnvStep, SacUpdate,
            LogPosterior, DiscriminatorUpdate, GeneratorUpdate, AlphaUpdate,
        ];
        assert_eq!(trace, expected);
    }

    #[test]
    fn uniform_tasks_keep_entropy_and_alpha_fixed() {
        let mut c = toy_config(2, 60);
        c.discovery.method = Method::UniformTasks;
        let out = run_discovery(c, None).unwrap();
        let h0 = (2f64).ln();
        for row in &out.metrics {
            assert!((row.mean_entropy - h0).abs() < 1e-12);
            assert_eq!(row.alpha, 1.0);
        }
        assert!(out.skills.tasks.generator().is_none());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = run_discovery(toy_config(2, 50), None).unwrap();
        let b = run_discovery(toy_config(2, 50), None).unwrap();
        assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
        assert_eq!(a.skills.policy.fingerprint_bytes(), b.skills.policy.fingerprint_bytes());
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let whole = run_discovery(toy_config(2, 60), None).unwrap();

        let mut first = toy_config(2, 60);
        first.discovery.checkpoint_every = 30;
        let mut run = DiscoveryRun::new(first).unwrap();
        for _ in 0..30 {
            run.step(None).unwrap();
        }
        let ckpt = dir.path().join(STATE_CHECKPOINT);
        run.save_state(&ckpt).unwrap();
        drop(run);
        let resumed = DiscoveryRun::resume(&ckpt).unwrap().run(Some(dir.path())).unwrap();
        assert_eq!(metrics_csv(&whole.metrics), metrics_csv(&resumed.metrics));
        assert_eq!(whole.skills.policy.fingerprint_bytes(), resumed.skills.policy.fingerprint_bytes());
        assert_eq!(whole.skills.tasks, resumed.skills.tasks);
        let written = fs::read_to_string(dir.path().join(METRICS_CSV)).unwrap();
        assert_eq!(written, metrics_csv(&whole.metrics));
        let skills = SkillSet::load(&dir.path().join(SKILLS_CHECKPOINT), Some(resumed_fingerprint())).unwrap();
        assert_eq!(skills.num_skills, 2);
    }

    fn resumed_fingerprint() -> &'static str {
        static FP: std::sync::OnceLock<String> = std::sync::OnceLock::new();
        FP.get_or_init(|| toy_config(2, 1).world.build().unwrap().param_spec().fingerprint())
    }

    #[test]
    fn mi_estimate_stays_in_range() {
        let mut c = toy_config(2, 600);
        c.discovery.eval_every = 100;
        let out = run_discovery(c, None).unwrap();
        for row in &out.metrics {
            assert!(row.mi_lower_bound <= 2f64.ln() + 1e-12);
            assert!(row.mi_lower_bound >= -0.02, "row {row:?}");
        }
    }

    #[test]
    fn errors_carry_iteration() {
        let mut run = DiscoveryRun::new(toy_config(2, 5)).unwrap();
        run.step(None).unwrap();
        run.state.policy = SkillPolicy::new(3, 2, 2, 0.25, SacConfig::default(), &mut derive_rng(0, "x", 0)).unwrap();
        let err = run.step(None).unwrap_err();
        assert!(matches!(err, SlideError::AtIteration { iteration: 1, .. }), "{err}");
    }

    use crate::skill_policy::SacConfig;
}
