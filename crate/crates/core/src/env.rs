//! Desk-scale 2D arenas with an explicit agent/surrounding state split.
//!
//! Two tasks share one contact model: `PointPush` (drive the object disc onto
//! a goal position) and `PointNav` (reach the object disc). The agent is a
//! disc of radius 0.03 moving up to 0.05 units per step inside the unit
//! square; the object disc (radius 0.05) is displaced kinematically on
//! overlap and keeps a decaying one-step velocity memory.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AGENT_RADIUS: f32 = 0.03;
pub const OBJECT_RADIUS: f32 = 0.05;
/// Agent-object center distance at contact.
pub const CONTACT_DISTANCE: f32 = AGENT_RADIUS + OBJECT_RADIUS;
pub const AGENT_STEP_SCALE: f32 = 0.05;
pub const OBJECT_VEL_DECAY: f32 = 0.8;
pub const PUSH_GOAL_TOLERANCE: f32 = 0.05;
pub const NAV_REACH_TOLERANCE: f32 = 0.08;
pub const OBSERVATION_CLIP: f32 = 200.0;
pub const OBSERVATION_DIM: usize = 6;
pub const GOAL_DIM: usize = 2;
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    PointPush,
    PointNav,
}

impl EnvKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "point-push" => Ok(EnvKind::PointPush),
            "point-nav" => Ok(EnvKind::PointNav),
            other => Err(Error::Config(format!(
                "unknown environment '{other}' (expected point-push or point-nav)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::PointPush => "point-push",
            EnvKind::PointNav => "point-nav",
        }
    }
}

/// Static environment parameters.
#[derive(Debug, Clone, Copy)]
pub struct EnvParams {
    pub kind: EnvKind,
    pub episode_length: usize,
}

impl EnvParams {
    pub fn new(kind: EnvKind, episode_length: usize) -> Self {
        Self {
            kind,
            episode_length,
        }
    }
}

/// Full simulator state for one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub agent_pos: [f32; 2],
    pub object_pos: [f32; 2],
    pub object_vel: [f32; 2],
    pub goal: [f32; 2],
    pub step_index: usize,
}

/// Outcome of one step.
#[derive(Debug, Clone)]
pub struct StepResult {
    /// `agent_pos ++ object_pos ++ object_vel`, entries clipped to
    /// `[-OBSERVATION_CLIP, OBSERVATION_CLIP]`.
    pub observation: Vec<f32>,
    pub task_reward: f32,
    pub done: bool,
    pub success: bool,
    /// Set when the action had to be clamped into `[-1, 1]`.
    pub action_clamped: bool,
}

fn dist(a: [f32; 2], b: [f32; 2]) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clamp_to_arena(p: [f32; 2]) -> [f32; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

fn clip_obs(v: f32) -> f32 {
    v.clamp(-OBSERVATION_CLIP, OBSERVATION_CLIP)
}

/// Observation vector for a state: `agent_pos ++ object_pos ++ object_vel`.
pub fn observation(state: &EnvState) -> Vec<f32> {
    vec![
        clip_obs(state.agent_pos[0]),
        clip_obs(state.agent_pos[1]),
        clip_obs(state.object_pos[0]),
        clip_obs(state.object_pos[1]),
        clip_obs(state.object_vel[0]),
        clip_obs(state.object_vel[1]),
    ]
}

/// Fresh episode: agent at the arena center, object uniform in `[0.2, 0.8]^2`
/// at least 0.1 from the agent, goal uniform in `[0.2, 0.8]^2`.
pub fn reset(params: &EnvParams, rng: &mut impl Rng) -> (EnvState, Vec<f32>) {
    let _ = params;
    let agent_pos = [0.5f32, 0.5];
    let object_pos = loop {
        let candidate = [rng.gen_range(0.2..=0.8f32), rng.gen_range(0.2..=0.8f32)];
        if dist(candidate, agent_pos) >= 0.1 {
            break candidate;
        }
    };
    let goal = [rng.gen_range(0.2..=0.8f32), rng.gen_range(0.2..=0.8f32)];
    let state = EnvState {
        agent_pos,
        object_pos,
        object_vel: [0.0, 0.0],
        goal,
        step_index: 0,
    };
    let obs = observation(&state);
    (state, obs)
}

fn success_for(kind: EnvKind, state: &EnvState) -> bool {
    match kind {
        EnvKind::PointPush => dist(state.object_pos, state.goal) <= PUSH_GOAL_TOLERANCE,
        EnvKind::PointNav => dist(state.agent_pos, state.object_pos) <= NAV_REACH_TOLERANCE,
    }
}

/// Push the object out along the agent-object center line until the
/// separation equals the contact distance. If the arena wall blocks the
/// object, the agent is backed off instead.
fn resolve_overlap(agent_pos: &mut [f32; 2], object_pos: &mut [f32; 2]) -> [f32; 2] {
    let mut d = dist(*agent_pos, *object_pos);
    if d >= CONTACT_DISTANCE {
        return [0.0, 0.0];
    }
    let dir = if d > 1e-9 {
        [
            (object_pos[0] - agent_pos[0]) / d,
            (object_pos[1] - agent_pos[1]) / d,
        ]
    } else {
        [1.0, 0.0]
    };
    let before = *object_pos;
    let target = [
        agent_pos[0] + dir[0] * CONTACT_DISTANCE,
        agent_pos[1] + dir[1] * CONTACT_DISTANCE,
    ];
    *object_pos = clamp_to_arena(target);
    d = dist(*agent_pos, *object_pos);
    if d < CONTACT_DISTANCE - 1e-9 {
        // Wall-pinned object; the agent yields.
        let dir = if d > 1e-9 {
            [
                (agent_pos[0] - object_pos[0]) / d,
                (agent_pos[1] - object_pos[1]) / d,
            ]
        } else {
            [-1.0, 0.0]
        };
        *agent_pos = clamp_to_arena([
            object_pos[0] + dir[0] * CONTACT_DISTANCE,
            object_pos[1] + dir[1] * CONTACT_DISTANCE,
        ]);
    }
    [object_pos[0] - before[0], object_pos[1] - before[1]]
}

/// Advance one step. Actions outside `[-1, 1]` are clamped and flagged.
pub fn step(params: &EnvParams, state: &EnvState, action: [f32; 2]) -> (EnvState, StepResult) {
    let clamped = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
    let action_clamped = clamped != action;

    let mut next = *state;
    next.agent_pos = clamp_to_arena([
        state.agent_pos[0] + AGENT_STEP_SCALE * clamped[0],
        state.agent_pos[1] + AGENT_STEP_SCALE * clamped[1],
    ]);

    if dist(next.agent_pos, next.object_pos) < CONTACT_DISTANCE {
        let displacement = resolve_overlap(&mut next.agent_pos, &mut next.object_pos);
        next.object_vel = displacement;
    } else {
        next.object_vel = [
            next.object_vel[0] * OBJECT_VEL_DECAY,
            next.object_vel[1] * OBJECT_VEL_DECAY,
        ];
        next.object_pos = clamp_to_arena([
            next.object_pos[0] + next.object_vel[0],
            next.object_pos[1] + next.object_vel[1],
        ]);
        if dist(next.agent_pos, next.object_pos) < CONTACT_DISTANCE {
            let displacement = resolve_overlap(&mut next.agent_pos, &mut next.object_pos);
            next.object_vel = displacement;
        }
    }

    next.step_index = state.step_index + 1;
    let success = success_for(params.kind, &next);
    let done = success || next.step_index >= params.episode_length;
    let result = StepResult {
        observation: observation(&next),
        task_reward: if success { 1.0 } else { 0.0 },
        done,
        success,
        action_clamped,
    };
    (next, result)
}

/// Index sets partitioning an observation vector into agent state and
/// surrounding state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSplit {
    agent_indices: Vec<usize>,
    surrounding_indices: Vec<usize>,
}

impl StateSplit {
    pub fn new(
        agent_indices: Vec<usize>,
        surrounding_indices: Vec<usize>,
        observation_dim: usize,
    ) -> Result<Self> {
        if agent_indices.is_empty() || surrounding_indices.is_empty() {
            return Err(Error::Validation(
                "both index sets of a state split must be non-empty".into(),
            ));
        }
        for &i in agent_indices.iter().chain(&surrounding_indices) {
            if i >= observation_dim {
                return Err(Error::Validation(format!(
                    "split index {i} out of range for observation dim {observation_dim}"
                )));
            }
        }
        if agent_indices.iter().any(|i| surrounding_indices.contains(i)) {
            return Err(Error::Validation("split index sets must be disjoint".into()));
        }
        Ok(Self {
            agent_indices,
            surrounding_indices,
        })
    }

    /// Default for both environments: agent position vs. object position.
    /// Velocity and goal stay outside both sets.
    pub fn default_position_split() -> Self {
        Self::new(vec![0, 1], vec![2, 3], OBSERVATION_DIM).unwrap()
    }

    pub fn agent_indices(&self) -> &[usize] {
        &self.agent_indices
    }

    pub fn surrounding_indices(&self) -> &[usize] {
        &self.surrounding_indices
    }
}

/// Select `(agent_state, surrounding_state)` sub-vectors in index order.
pub fn split_observation(obs: &[f32], split: &StateSplit) -> Result<(Vec<f32>, Vec<f32>)> {
    let pick = |indices: &[usize]| -> Result<Vec<f32>> {
        indices
            .iter()
            .map(|&i| {
                obs.get(i).copied().ok_or_else(|| {
                    Error::Dimension(format!(
                        "split index {i} out of range for observation of length {}",
                        obs.len()
                    ))
                })
            })
            .collect()
    };
    Ok((pick(&split.agent_indices)?, pick(&split.surrounding_indices)?))
}

/// Mean total object displacement per episode under uniform random actions.
/// Serves as the null baseline for behavior-emergence checks.
pub fn random_policy_baseline(params: &EnvParams, episodes: usize, rng: &mut impl Rng) -> f64 {
    let mut total = 0.0f64;
    for _ in 0..episodes {
        let (mut state, _) = reset(params, rng);
        for _ in 0..params.episode_length {
            let action = [rng.gen_range(-1.0..=1.0f32), rng.gen_range(-1.0..=1.0f32)];
            let (next, _) = step(params, &state, action);
            total += dist(next.object_pos, state.object_pos) as f64;
            state = next;
        }
    }
    total / episodes as f64
}
