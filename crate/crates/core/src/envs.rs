//! Deterministic 2D point-mass goal navigation with hazard and pillar
//! constraints.
//!
//! The agent commands a velocity in `[-1, 1]^2` (scaled by `max_speed`).
//! Reward is goal progress plus a bonus on reaching the goal, after which a
//! new goal is drawn and the episode continues. Hazards are trespassable
//! circles with cost `max(0, R - d)`; pillars block motion and cost `1` on
//! contact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of nearest hazards (and, separately, pillars) in the observation.
pub const NEAREST_OBSTACLES: usize = 4;

/// Features per obstacle slot: relative x, relative y, radius.
const OBSTACLE_FEATURES: usize = 3;

/// Pillar contact tolerance for points projected onto the pillar boundary.
const CONTACT_TOL: f64 = 1e-9;

const MAX_PLACEMENT_TRIES: usize = 10_000;

/// Fraction of the world half-extent used when sampling start and goal.
const SPAWN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Self {
            center: [x, y],
            radius,
        }
    }

    pub fn distance_to_center(&self, p: [f64; 2]) -> f64 {
        dist(self.center, p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub hazards: Vec<Circle>,
    pub pillars: Vec<Circle>,
    pub goal_radius: f64,
    pub world_half_extent: f64,
    pub max_episode_steps: usize,
    pub dt: f64,
    pub max_speed: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            hazards: Vec::new(),
            pillars: Vec::new(),
            goal_radius: 0.3,
            world_half_extent: 2.0,
            max_episode_steps: 200,
            dt: 0.05,
            max_speed: 1.0,
            seed: 0,
        }
    }
}

pub const DEFAULT_HAZARD_RADIUS: f64 = 0.2;
pub const DEFAULT_PILLAR_RADIUS: f64 = 0.2;

/// Obstacle centers shared by the 1/4/8 layouts; an `n`-obstacle layout uses
/// the first `n`.
const LAYOUT: [[f64; 2]; 8] = [
    [0.0, 0.0],
    [-0.9, 0.8],
    [0.9, 0.9],
    [0.8, -0.8],
    [-0.8, -0.9],
    [-1.5, 0.0],
    [1.5, 0.0],
    [0.0, 1.5],
];

/// Names accepted by [`EnvConfig::preset`].
pub const PRESETS: [&str; 6] = [
    "point-hazard-1",
    "point-hazard-4",
    "point-hazard-8",
    "point-pillar-1",
    "point-pillar-4",
    "point-pillar-8",
];

impl EnvConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (kind, count) = name
            .strip_prefix("point-")
            .and_then(|rest| rest.rsplit_once('-'))
            .ok_or_else(|| Error::config(format!("unknown environment preset `{name}`")))?;
        let count: usize = match count {
            "1" => 1,
            "4" => 4,
            "8" => 8,
            _ => return Err(Error::config(format!("unknown environment preset `{name}`"))),
        };
        // the 4-layout leaves the center free
        let centers: Vec<[f64; 2]> = match count {
            1 => LAYOUT[..1].to_vec(),
            4 => LAYOUT[1..5].to_vec(),
            _ => LAYOUT.to_vec(),
        };
        let mut config = Self::default();
        match kind {
            "hazard" => {
                config.hazards = centers
                    .iter()
                    .map(|c| Circle::new(c[0], c[1], DEFAULT_HAZARD_RADIUS))
                    .collect()
            }
            "pillar" => {
                config.pillars = centers
                    .iter()
                    .map(|c| Circle::new(c[0], c[1], DEFAULT_PILLAR_RADIUS))
                    .collect()
            }
            _ => return Err(Error::config(format!("unknown environment preset `{name}`"))),
        }
        Ok(config)
    }

    /// Obstacle-free arena with the default geometry.
    pub fn open_field() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.world_half_extent;
        if !(e.is_finite() && e > 0.0) {
            return Err(Error::config("world_half_extent must be positive"));
        }
        if !(self.goal_radius.is_finite() && self.goal_radius > 0.0) {
            return Err(Error::config("goal_radius must be positive"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if !(self.max_speed.is_finite() && self.max_speed > 0.0) {
            return Err(Error::config("max_speed must be positive"));
        }
        if self.max_episode_steps < 1 {
            return Err(Error::config("max_episode_steps must be at least 1"));
        }
        for (kind, list) in [("hazard", &self.hazards), ("pillar", &self.pillars)] {
            for c in list {
                if !(c.radius.is_finite() && c.radius > 0.0) {
                    return Err(Error::config(format!("{kind} radius must be positive")));
                }
                if c.center.iter().any(|v| !v.is_finite() || v.abs() > e) {
                    return Err(Error::config(format!(
                        "{kind} at {:?} lies outside the world bounds",
                        c.center
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of cost signals (always one: hazard and pillar costs add).
    pub fn num_costs(&self) -> usize {
        1
    }

    pub fn obs_dim(&self) -> usize {
        2 + 1 + 2 * NEAREST_OBSTACLES * OBSTACLE_FEATURES + 2
    }

    pub fn action_dim(&self) -> usize {
        2
    }

    fn sentinel(&self) -> f64 {
        2.0 * self.world_half_extent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub goal: [f64; 2],
    pub steps_elapsed: usize,
    pub prev_goal_distance: f64,
    pub done: bool,
    /// Source of goal re-placements; part of the state so stepping is a
    /// pure function of `(config, state, action)`.
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub goal_compass: [f64; 2],
    pub goal_distance: f64,
    /// `[dx, dy, radius]` of the nearest hazards, sentinel-padded.
    pub hazard_features: Vec<[f64; 3]>,
    pub pillar_features: Vec<[f64; 3]>,
    pub velocity: [f64; 2],
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 + 6 * NEAREST_OBSTACLES + 2);
        v.extend_from_slice(&self.goal_compass);
        v.push(self.goal_distance);
        for f in self.hazard_features.iter().chain(&self.pillar_features) {
            v.extend_from_slice(f);
        }
        v.extend_from_slice(&self.velocity);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub observation: Observation,
    pub reward: f64,
    pub costs: Vec<f64>,
    pub done: bool,
    pub goal_reached: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// `(d_prev - d_now) + 1[d_now < goal_radius]`.
pub fn goal_reward(d_prev: f64, d_now: f64, goal_radius: f64) -> f64 {
    let progress = d_prev - d_now;
    if d_now < goal_radius {
        progress + 1.0
    } else {
        progress
    }
}

/// `max(0, R_h - d_h)`.
pub fn hazard_cost(d_h: f64, r_h: f64) -> f64 {
    (r_h - d_h).max(0.0)
}

/// Hazard cost at a position: the worst cost over all hazards (with equal
/// radii this is the cost of the closest hazard).
pub fn hazard_cost_at(position: [f64; 2], hazards: &[Circle]) -> f64 {
    hazards
        .iter()
        .map(|h| hazard_cost(h.distance_to_center(position), h.radius))
        .fold(0.0, f64::max)
}

/// `1` if the position touches any pillar, else `0`.
pub fn pillar_cost(position: [f64; 2], pillars: &[Circle]) -> f64 {
    let contact = pillars
        .iter()
        .any(|p| p.distance_to_center(position) <= p.radius + CONTACT_TOL);
    if contact {
        1.0
    } else {
        0.0
    }
}

/// Pushes a point out of every pillar it penetrates onto the pillar boundary.
fn resolve_pillars(mut p: [f64; 2], pillars: &[Circle]) -> [f64; 2] {
    for pillar in pillars {
        let d = pillar.distance_to_center(p);
        if d < pillar.radius {
            if d > 0.0 {
                let s = pillar.radius / d;
                p = [
                    pillar.center[0] + (p[0] - pillar.center[0]) * s,
                    pillar.center[1] + (p[1] - pillar.center[1]) * s,
                ];
            } else {
                p = [pillar.center[0] + pillar.radius, pillar.center[1]];
            }
        }
    }
    p
}

fn nearest_features(
    position: [f64; 2],
    obstacles: &[Circle],
    sentinel: f64,
) -> Vec<[f64; 3]> {
    let mut ranked: Vec<(f64, usize)> = obstacles
        .iter()
        .enumerate()
        .map(|(i, c)| (c.distance_to_center(position), i))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<[f64; 3]> = ranked
        .iter()
        .take(NEAREST_OBSTACLES)
        .map(|&(_, i)| {
            let c = &obstacles[i];
            [
                c.center[0] - position[0],
                c.center[1] - position[1],
                c.radius,
            ]
        })
        .collect();
    out.resize(NEAREST_OBSTACLES, [sentinel, sentinel, 0.0]);
    out
}

/// Stateless environment logic bound to one configuration.
#[derive(Debug, Clone)]
pub struct PointNavEnv {
    config: EnvConfig,
}

impl PointNavEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        let dx = state.goal[0] - state.position[0];
        let dy = state.goal[1] - state.position[1];
        let d = dx.hypot(dy);
        let goal_compass = if d > 0.0 { [dx / d, dy / d] } else { [0.0, 0.0] };
        let sentinel = self.config.sentinel();
        Observation {
            goal_compass,
            goal_distance: d,
            hazard_features: nearest_features(state.position, &self.config.hazards, sentinel),
            pillar_features: nearest_features(state.position, &self.config.pillars, sentinel),
            velocity: state.velocity,
        }
    }

    fn sample_point(&self, rng: &mut ChaCha8Rng, clear: impl Fn([f64; 2]) -> bool) -> Result<[f64; 2]> {
        let span = SPAWN_FRACTION * self.config.world_half_extent;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let p = [rng.random_range(-span..span), rng.random_range(-span..span)];
            if clear(p) {
                return Ok(p);
            }
        }
        Err(Error::config(
            "no free space found for placement; obstacles cover the arena",
        ))
    }

    fn clear_of_obstacles(&self, p: [f64; 2], margin: f64) -> bool {
        self.config
            .hazards
            .iter()
            .chain(&self.config.pillars)
            .all(|c| c.distance_to_center(p) > c.radius + margin)
    }

    fn sample_goal(&self, rng: &mut ChaCha8Rng, position: [f64; 2]) -> Result<[f64; 2]> {
        let r = self.config.goal_radius;
        self.sample_point(rng, |p| {
            self.clear_of_obstacles(p, r) && dist(p, position) > 2.0 * r
        })
    }

    pub fn reset(&self, seed: u64) -> Result<(EnvState, Observation)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let position = self.sample_point(&mut rng, |p| self.clear_of_obstacles(p, 0.0))?;
        let goal = self.sample_goal(&mut rng, position)?;
        let state = EnvState {
            position,
            velocity: [0.0, 0.0],
            goal,
            steps_elapsed: 0,
            prev_goal_distance: dist(position, goal),
            done: false,
            rng,
        };
        let obs = self.observe(&state);
        Ok((state, obs))
    }

    pub fn step(&self, state: &EnvState, action: [f64; 2]) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::domain("cannot step an environment whose episode is done"));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::domain(format!("non-finite action {action:?}")));
        }
        let cfg = &self.config;
        let e = cfg.world_half_extent;
        let velocity = [
            action[0].clamp(-1.0, 1.0) * cfg.max_speed,
            action[1].clamp(-1.0, 1.0) * cfg.max_speed,
        ];
        let moved = [
            (state.position[0] + velocity[0] * cfg.dt).clamp(-e, e),
            (state.position[1] + velocity[1] * cfg.dt).clamp(-e, e),
        ];
        let position = resolve_pillars(moved, &cfg.pillars);

        let mut next = state.clone();
        next.position = position;
        next.velocity = velocity;
        next.steps_elapsed += 1;

        let d_now = dist(position, next.goal);
        let reward = goal_reward(state.prev_goal_distance, d_now, cfg.goal_radius);
        let goal_reached = d_now < cfg.goal_radius;
        if goal_reached {
            let mut rng = next.rng.clone();
            next.goal = self.sample_goal(&mut rng, position)?;
            next.rng = rng;
            next.prev_goal_distance = dist(position, next.goal);
        } else {
            next.prev_goal_distance = d_now;
        }

        let cost = hazard_cost_at(position, &cfg.hazards) + pillar_cost(position, &cfg.pillars);
        let done = next.steps_elapsed >= cfg.max_episode_steps;
        next.done = done;
        let observation = self.observe(&next);
        Ok(StepOutcome {
            state: next,
            observation,
            reward,
            costs: vec![cost.max(0.0)],
            done,
            goal_reached,
        })
    }
}
