//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string; the plain Rust functions behind them
//! are usable and tested natively.

use rand::Rng;
use serde::Serialize;
use slide_core::config::Config;
use slide_core::discovery::{update_alpha, DiversityState};
use slide_core::generator::{Generator, GeneratorSample};
use slide_core::param_space::{
    squashed_log_density, uniform_distribution, FactorizedDistribution, Head, ParamSpec, TaskParamSpec,
};
use slide_core::pushworld::{instantiate, task_param_spec, Action, Goal, WorldState, MAX_DISPLACEMENT};
use slide_core::seed::derive_rng;
use slide_core::{Result, SlideError};
use wasm_bindgen::prelude::*;

#[derive(Clone, Debug, Serialize)]
pub struct TaskHistogram {
    pub entropy: f64,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Analytic density at each bin centre.
    pub density: Vec<f64>,
}

/// Samples a single squashed-Gaussian task parameter.
pub fn task_histogram(mean: f64, log_std: f64, lower: f64, upper: f64, n: usize, bins: usize, seed: u64) -> Result<TaskHistogram> {
    if bins == 0 {
        return Err(SlideError::Domain("bins must be positive".into()));
    }
    let spec = TaskParamSpec::new(vec![ParamSpec::continuous("w", lower, upper)?])?;
    let dist = FactorizedDistribution::new(&spec, vec![Head::Gaussian { mean, log_std }])?;
    let (mean, log_std) = match dist.heads()[0] {
        Head::Gaussian { mean, log_std } => (mean, log_std),
        Head::Categorical { .. } => unreachable!("continuous spec"),
    };
    let width = (upper - lower) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lower + width * i as f64).collect();
    let mut counts = vec![0u64; bins];
    let mut rng = derive_rng(seed, "web:tasks", 0);
    for _ in 0..n {
        let x = dist.sample(&mut rng).values[0];
        counts[(((x - lower) / width) as usize).min(bins - 1)] += 1;
    }
    let density = (0..bins)
        .map(|i| squashed_log_density(lower + width * (i as f64 + 0.5), mean, log_std, lower, upper).exp())
        .collect();
    Ok(TaskHistogram {
        entropy: dist.entropy(),
        edges,
        counts,
        density,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Rollout {
    pub goals: Vec<Goal>,
    pub frames: Vec<WorldState>,
    pub rewards: Vec<f64>,
    pub total_return: f64,
    pub objects_in_goal: usize,
}

/// Scripted pusher: line up behind the first object outside its goal,
/// then push it toward the goal centre.
fn scripted_action(state: &WorldState, goals: &[Goal]) -> Action {
    let Some(o) = state.objects.iter().find(|o| {
        let g = goals[o.category];
        o.present && ((o.position[0] - g.center[0]).powi(2) + (o.position[1] - g.center[1]).powi(2)).sqrt() > g.radius
    }) else {
        return Action::new(0.0, 0.0);
    };
    let g = goals[o.category].center;
    let (dx, dy) = (g[0] - o.position[0], g[1] - o.position[1]);
    let norm = (dx * dx + dy * dy).sqrt().max(1e-9);
    let behind = [o.position[0] - dx / norm * (o.radius + 0.02), o.position[1] - dy / norm * (o.radius + 0.02)];
    let to_behind = [behind[0] - state.pusher[0], behind[1] - state.pusher[1]];
    let target = if (to_behind[0].powi(2) + to_behind[1].powi(2)).sqrt() > 0.03 {
        to_behind
    } else {
        [dx, dy]
    };
    Action::new(target[0], target[1]).clipped()
}

/// One PushWorld episode on a task drawn from the uniform sampler.
/// `policy` is `"scripted"` or `"random"`.
pub fn push_rollout(task_seed: u64, episode_seed: u64, policy: &str) -> Result<Rollout> {
    let spec = task_param_spec();
    let w = uniform_distribution(&spec).sample(&mut derive_rng(task_seed, "web:task", 0));
    let mut instance = instantiate(&w, episode_seed)?;
    let goals = instance.goals.to_vec();
    let mut state = instance.initial_state;
    let mut rng = derive_rng(episode_seed, "web:policy", 0);
    let mut frames = vec![state];
    let mut rewards = Vec::new();
    while !instance.is_done() {
        let action = match policy {
            "scripted" => scripted_action(&state, &goals),
            "random" => Action::new(
                rng.random_range(-MAX_DISPLACEMENT..=MAX_DISPLACEMENT),
                rng.random_range(-MAX_DISPLACEMENT..=MAX_DISPLACEMENT),
            ),
            other => return Err(SlideError::Domain(format!("unknown policy `{other}`"))),
        };
        let (next, reward, _) = instance.step(&state, action)?;
        state = next;
        frames.push(state);
        rewards.push(reward);
    }
    Ok(Rollout {
        objects_in_goal: instance.objects_in_goal(&state),
        total_return: rewards.iter().sum(),
        goals,
        frames,
        rewards,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DualTrace {
    pub step: Vec<usize>,
    pub entropy: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Two skills over three unit parameters, each sample scored by how close
/// it lands to the centre; the temperature steers mean entropy toward
/// `target_entropy`. Records every `record_every` steps.
pub fn alpha_dual_trace(target_entropy: f64, alpha_lr: f64, steps: usize, record_every: usize, seed: u64) -> Result<DualTrace> {
    let spec = TaskParamSpec::new(
        ["x", "y", "w"]
            .iter()
            .map(|n| ParamSpec::continuous(n, 0.0, 1.0))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let defaults = Config::default_config();
    let mut rng = derive_rng(seed, "web:dual", 0);
    let mut generator = Generator::new(&spec, 2, defaults.generator, &mut rng)?;
    let mut dual = DiversityState::new(defaults.discovery.initial_alpha, target_entropy, alpha_lr)?;
    let every = record_every.max(1);
    let mut trace = DualTrace {
        step: Vec::new(),
        entropy: Vec::new(),
        alpha: Vec::new(),
    };
    for step in 0..steps {
        let batch = (0..16)
            .map(|i| {
                let z = i % 2;
                let w = generator.distribution_for(z)?.sample(&mut rng);
                let score = w.values.iter().map(|x| -20.0 * (x - 0.5).powi(2)).sum();
                Ok(GeneratorSample {
                    skill: z,
                    params: w,
                    log_q: score,
                    discounted_return: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        generator.update(&batch, dual.alpha())?;
        let h = generator.mean_entropy()?;
        let alpha = update_alpha(&mut dual, h);
        if step % every == 0 || step + 1 == steps {
            trace.step.push(step);
            trace.entropy.push(h);
            trace.alpha.push(alpha);
        }
    }
    Ok(trace)
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsValue> {
    value
        .map(|v| serde_json::to_string(&v).expect("plain data serializes"))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = taskHistogram)]
pub fn task_histogram_js(mean: f64, log_std: f64, lower: f64, upper: f64, n: u32, bins: u32, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(task_histogram(mean, log_std, lower, upper, n as usize, bins as usize, seed as u64))
}

#[wasm_bindgen(js_name = pushRollout)]
pub fn push_rollout_js(task_seed: u32, episode_seed: u32, policy: &str) -> std::result::Result<String, JsValue> {
    to_js(push_rollout(task_seed as u64, episode_seed as u64, policy))
}

#[wasm_bindgen(js_name = alphaDualTrace)]
pub fn alpha_dual_trace_js(target_entropy: f64, alpha_lr: f64, steps: u32, record_every: u32, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(alpha_dual_trace(target_entropy, alpha_lr, steps as usize, record_every as usize, seed as u64))
}
