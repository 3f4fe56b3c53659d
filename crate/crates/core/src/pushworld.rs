//! PushWorld: a planar point pusher moving disc objects toward hidden,
//! category-specific goals.
//!
//! Task parameters (15, in this order):
//!
//! | index | name                | kind                     |
//! |-------|---------------------|--------------------------|
//! | 0..9  | `goal{c}_x`, `goal{c}_y`, `goal{c}_radius` for c = 0..3 | continuous |
//! | 9..15 | `object{s}_category`, `object{s}_radius` for s = 0..3   | discrete(3), continuous |
//!
//! Contact is kinematic. The pusher travels its (clipped) displacement in
//! sub-steps of at most [`SUBSTEP`]; after each sub-step every object disc
//! containing the pusher is pushed out along the pusher→center direction,
//! then object/object overlaps are split symmetrically along the center
//! line (two passes) and centers are clamped to the unit square. A
//! sub-step that still leaves any overlap is reverted and the motion stops
//! there (the pusher is blocked).
//!
//! Reward is `Σ_obj [d(pos_t, goal) − d(pos_{t+1}, goal)]`, so an episode
//! return telescopes to the change in total object-to-goal distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::env::{EnvStep, Environment};
use crate::error::{Result, SlideError};
use crate::param_space::{ParamSpec, TaskParamSpec, TaskParams};

pub const HORIZON: usize = 20;
pub const MAX_DISPLACEMENT: f64 = 0.2;
pub const NUM_SLOTS: usize = 3;
pub const NUM_CATEGORIES: usize = 3;
pub const OBS_DIM: usize = 2 + NUM_SLOTS * (1 + 2 + NUM_CATEGORIES + 1);
pub const ACTION_DIM: usize = 2;
pub const GOAL_RADIUS_RANGE: (f64, f64) = (0.05, 0.2);
pub const OBJECT_RADIUS_RANGE: (f64, f64) = (0.03, 0.08);
/// Longest pusher move between contact resolutions.
pub const SUBSTEP: f64 = 0.005;

const OVERLAP_TOL: f64 = 1e-9;
const PLACEMENT_ATTEMPTS: usize = 10_000;

pub fn goal_x_index(category: usize) -> usize {
    3 * category
}

pub fn goal_y_index(category: usize) -> usize {
    3 * category + 1
}

pub fn goal_radius_index(category: usize) -> usize {
    3 * category + 2
}

pub fn category_index(slot: usize) -> usize {
    3 * NUM_CATEGORIES + 2 * slot
}

pub fn object_radius_index(slot: usize) -> usize {
    3 * NUM_CATEGORIES + 2 * slot + 1
}

/// The 15-dimensional PushWorld task space.
pub fn task_param_spec() -> TaskParamSpec {
    static SPEC: OnceLock<TaskParamSpec> = OnceLock::new();
    SPEC.get_or_init(|| {
        let mut params = Vec::with_capacity(15);
        for c in 0..NUM_CATEGORIES {
            params.push(ParamSpec::continuous(&format!("goal{c}_x"), 0.0, 1.0).unwrap());
            params.push(ParamSpec::continuous(&format!("goal{c}_y"), 0.0, 1.0).unwrap());
            let (lo, hi) = GOAL_RADIUS_RANGE;
            params.push(ParamSpec::continuous(&format!("goal{c}_radius"), lo, hi).unwrap());
        }
        for s in 0..NUM_SLOTS {
            params.push(ParamSpec::discrete(&format!("object{s}_category"), NUM_CATEGORIES).unwrap());
            let (lo, hi) = OBJECT_RADIUS_RANGE;
            params.push(ParamSpec::continuous(&format!("object{s}_radius"), lo, hi).unwrap());
        }
        TaskParamSpec::new(params).unwrap()
    })
    .clone()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Object {
    pub present: bool,
    pub position: [f64; 2],
    pub category: usize,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub pusher: [f64; 2],
    pub objects: [Object; NUM_SLOTS],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Planar displacement of the pusher.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    pub displacement: [f64; 2],
}

impl Action {
    pub fn new(dx: f64, dy: f64) -> Self {
        Action {
            displacement: [dx, dy],
        }
    }

    pub fn clipped(self) -> Self {
        let c = |v: f64| {
            if v.is_nan() {
                0.0
            } else {
                v.clamp(-MAX_DISPLACEMENT, MAX_DISPLACEMENT)
            }
        };
        Action::new(c(self.displacement[0]), c(self.displacement[1]))
    }
}

/// `(s, a, r, s')` at the world-state level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: WorldState,
    pub action: Action,
    pub reward: f64,
    pub next_state: WorldState,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clamp_unit(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

/// A task `M(w)` with its derived goal table.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInstance {
    pub params: TaskParams,
    pub goals: [Goal; NUM_CATEGORIES],
    pub episode_seed: u64,
    pub initial_state: WorldState,
    pub horizon: usize,
    steps_taken: usize,
}

pub fn goal_table(w: &TaskParams) -> [Goal; NUM_CATEGORIES] {
    std::array::from_fn(|c| Goal {
        center: [w.values[goal_x_index(c)], w.values[goal_y_index(c)]],
        radius: w.values[goal_radius_index(c)],
    })
}

/// Creates `M(w)` and draws the initial state from a seeded source.
/// Objects are placed uniformly without mutual overlap; the pusher is
/// placed uniformly outside every object. Goals may overlap objects.
pub fn instantiate(w: &TaskParams, episode_seed: u64) -> Result<TaskInstance> {
    w.validate(&task_param_spec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let mut objects = [Object::default(); NUM_SLOTS];
    for slot in 0..NUM_SLOTS {
        let radius = w.values[object_radius_index(slot)];
        let category = w.category(category_index(slot));
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let p = [rng.random::<f64>(), rng.random::<f64>()];
            if objects[..slot]
                .iter()
                .all(|o| dist(o.position, p) >= o.radius + radius)
            {
                placed = Some(p);
                break;
            }
        }
        let position = placed.ok_or_else(|| SlideError::State("could not place objects".into()))?;
        objects[slot] = Object {
            present: true,
            position,
            category,
            radius,
        };
    }
    let mut pusher = None;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let p = [rng.random::<f64>(), rng.random::<f64>()];
        if objects.iter().all(|o| dist(o.position, p) >= o.radius) {
            pusher = Some(p);
            break;
        }
    }
    let pusher = pusher.ok_or_else(|| SlideError::State("could not place pusher".into()))?;
    Ok(TaskInstance {
        params: w.clone(),
        goals: goal_table(w),
        episode_seed,
        initial_state: WorldState { pusher, objects },
        horizon: HORIZON,
        steps_taken: 0,
    })
}

impl TaskInstance {
    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn is_done(&self) -> bool {
        self.steps_taken >= self.horizon
    }

    /// Σ over present objects of the distance to their category's goal.
    pub fn total_goal_distance(&self, state: &WorldState) -> f64 {
        state
            .objects
            .iter()
            .filter(|o| o.present)
            .map(|o| dist(o.position, self.goals[o.category].center))
            .sum()
    }

    /// Number of objects resting inside their goal disc.
    pub fn objects_in_goal(&self, state: &WorldState) -> usize {
        state
            .objects
            .iter()
            .filter(|o| o.present && dist(o.position, self.goals[o.category].center) <= self.goals[o.category].radius)
            .count()
    }

    /// Advances one step. Returns `(next_state, reward, done)`.
    pub fn step(&mut self, state: &WorldState, action: Action) -> Result<(WorldState, f64, bool)> {
        if self.is_done() {
            return Err(SlideError::State(format!(
                "episode already finished after {} steps",
                self.steps_taken
            )));
        }
        let next = simulate(state, action.clipped());
        let reward = self.total_goal_distance(state) - self.total_goal_distance(&next);
        self.steps_taken += 1;
        Ok((next, reward, self.is_done()))
    }
}

fn resolve_pusher_contacts(pusher: [f64; 2], objects: &mut [Object; NUM_SLOTS]) {
    for o in objects.iter_mut().filter(|o| o.present) {
        let d = dist(o.position, pusher);
        if d < o.radius {
            let dir = if d > 0.0 {
                [(o.position[0] - pusher[0]) / d, (o.position[1] - pusher[1]) / d]
            } else {
                [1.0, 0.0]
            };
            o.position = [pusher[0] + dir[0] * o.radius, pusher[1] + dir[1] * o.radius];
        }
    }
}

fn resolve_object_pairs(objects: &mut [Object; NUM_SLOTS]) {
    for i in 0..NUM_SLOTS {
        for j in (i + 1)..NUM_SLOTS {
            if !(objects[i].present && objects[j].present) {
                continue;
            }
            let (a, b) = (objects[i].position, objects[j].position);
            let d = dist(a, b);
            let depth = objects[i].radius + objects[j].radius - d;
            if depth > 0.0 {
                let dir = if d > 0.0 { [(b[0] - a[0]) / d, (b[1] - a[1]) / d] } else { [1.0, 0.0] };
                let half = 0.5 * depth;
                objects[i].position = [a[0] - dir[0] * half, a[1] - dir[1] * half];
                objects[j].position = [b[0] + dir[0] * half, b[1] + dir[1] * half];
            }
        }
    }
}

fn is_consistent(pusher: [f64; 2], objects: &[Object; NUM_SLOTS]) -> bool {
    let present: Vec<&Object> = objects.iter().filter(|o| o.present).collect();
    for (i, a) in present.iter().enumerate() {
        if dist(a.position, pusher) < a.radius - OVERLAP_TOL {
            return false;
        }
        for b in &present[i + 1..] {
            if dist(a.position, b.position) < a.radius + b.radius - OVERLAP_TOL {
                return false;
            }
        }
    }
    true
}

/// Kinematic update for an already clipped action.
pub fn simulate(state: &WorldState, action: Action) -> WorldState {
    let target = clamp_unit([
        state.pusher[0] + action.displacement[0],
        state.pusher[1] + action.displacement[1],
    ]);
    let delta = [target[0] - state.pusher[0], target[1] - state.pusher[1]];
    let length = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
    let substeps = (length / SUBSTEP).ceil().max(1.0) as usize;
    let mut current = *state;
    for k in 1..=substeps {
        let frac = k as f64 / substeps as f64;
        let pusher = [state.pusher[0] + delta[0] * frac, state.pusher[1] + delta[1] * frac];
        let mut objects = current.objects;
        resolve_pusher_contacts(pusher, &mut objects);
        for _ in 0..2 {
            resolve_object_pairs(&mut objects);
            for o in objects.iter_mut() {
                o.position = clamp_unit(o.position);
            }
        }
        if !is_consistent(pusher, &objects) {
            break;
        }
        current = WorldState { pusher, objects };
    }
    current
}

/// Fixed-length observation: pusher, then per slot
/// `[present, x, y, one-hot(category), radius]`. Goals are never encoded.
pub fn observe(state: &WorldState) -> Vec<f64> {
    let mut obs = Vec::with_capacity(OBS_DIM);
    obs.extend_from_slice(&state.pusher);
    for o in &state.objects {
        if o.present {
            obs.push(1.0);
            obs.extend_from_slice(&o.position);
            obs.extend((0..NUM_CATEGORIES).map(|c| if c == o.category { 1.0 } else { 0.0 }));
            obs.push(o.radius);
        } else {
            obs.extend(std::iter::repeat_n(0.0, 1 + 2 + NUM_CATEGORIES + 1));
        }
    }
    obs
}

/// [`Environment`] adapter holding the live instance and state.
#[derive(Clone, Debug)]
pub struct PushWorld {
    spec: TaskParamSpec,
    horizon: usize,
    episode: Option<(TaskInstance, WorldState)>,
}

impl Default for PushWorld {
    fn default() -> Self {
        PushWorld {
            spec: task_param_spec(),
            horizon: HORIZON,
            episode: None,
        }
    }
}

impl PushWorld {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_horizon(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(SlideError::config("world.horizon", "must be positive"));
        }
        Ok(PushWorld {
            horizon,
            ..Self::default()
        })
    }

    pub fn instance(&self) -> Option<&TaskInstance> {
        self.episode.as_ref().map(|(i, _)| i)
    }

    pub fn state(&self) -> Option<&WorldState> {
        self.episode.as_ref().map(|(_, s)| s)
    }
}

impl Environment for PushWorld {
    fn param_spec(&self) -> &TaskParamSpec {
        &self.spec
    }

    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn max_action(&self) -> f64 {
        MAX_DISPLACEMENT
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, params: &TaskParams, seed: u64) -> Result<Vec<f64>> {
        let mut instance = instantiate(params, seed)?;
        instance.horizon = self.horizon;
        let state = instance.initial_state;
        self.episode = Some((instance, state));
        Ok(observe(&state))
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let (instance, state) = self
            .episode
            .as_mut()
            .ok_or_else(|| SlideError::State("step before reset".into()))?;
        if action.len() != ACTION_DIM {
            return Err(SlideError::Domain(format!("expected {ACTION_DIM}-d action, got {}", action.len())));
        }
        let applied = Action::new(action[0], action[1]).clipped();
        let (next, reward, done) = instance.step(state, applied)?;
        *state = next;
        Ok(EnvStep {
            observation: observe(&next),
            reward,
            done,
            applied_action: applied.displacement.to_vec(),
        })
    }
}
