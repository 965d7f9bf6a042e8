//! Trajectory-structured experience buffer with uniform and MI-prioritized
//! sampling. Capacity is counted in transitions; eviction removes whole
//! trajectories, oldest first.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One episode of experience: `L+1` observations, `L` actions and rewards,
/// the episode goal, and a sampling priority (estimated MI for prioritized
/// replay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub observations: Vec<Vec<f32>>,
    pub actions: Vec<Vec<f32>>,
    pub goal: Vec<f32>,
    pub task_rewards: Vec<f32>,
    #[serde(default)]
    pub skill: Option<usize>,
    #[serde(default)]
    pub priority: f32,
    #[serde(default)]
    pub id: u64,
}

impl TrajectoryRecord {
    pub fn new(
        observations: Vec<Vec<f32>>,
        actions: Vec<Vec<f32>>,
        goal: Vec<f32>,
        task_rewards: Vec<f32>,
    ) -> Result<Self> {
        let record = Self {
            observations,
            actions,
            goal,
            task_rewards,
            skill: None,
            priority: 0.0,
            id: 0,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn with_skill(mut self, skill: usize) -> Self {
        self.skill = Some(skill);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.observations.len() != self.actions.len() + 1
            || self.observations.len() != self.task_rewards.len() + 1
        {
            return Err(Error::Validation(format!(
                "trajectory lengths inconsistent: {} observations, {} actions, {} rewards",
                self.observations.len(),
                self.actions.len(),
                self.task_rewards.len()
            )));
        }
        if self.actions.is_empty() {
            return Err(Error::Validation("trajectory has no transitions".into()));
        }
        let obs_dim = self.observations[0].len();
        if self.observations.iter().any(|o| o.len() != obs_dim) {
            return Err(Error::Validation("observation widths vary".into()));
        }
        let act_dim = self.actions[0].len();
        if self.actions.iter().any(|a| a.len() != act_dim) {
            return Err(Error::Validation("action widths vary".into()));
        }
        if self.priority < 0.0 {
            return Err(Error::Validation("priority must be non-negative".into()));
        }
        Ok(())
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// One sampled transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub observation: Vec<f32>,
    pub action: Vec<f32>,
    pub task_reward: f32,
    pub next_observation: Vec<f32>,
    pub goal: Vec<f32>,
    pub skill: Option<usize>,
    pub trajectory_id: u64,
    pub step_index: usize,
}

/// Prioritized-sampling exponents.
#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    /// Prioritization strength.
    pub alpha: f64,
    /// Importance-sampling factor.
    pub beta: f64,
    /// Added to every priority so zero-MI trajectories stay sampleable.
    pub epsilon_priority: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.4,
            epsilon_priority: 1e-6,
        }
    }
}

/// FIFO trajectory buffer with a transition-count capacity.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity_transitions: usize,
    trajectories: VecDeque<TrajectoryRecord>,
    total_transitions: usize,
    next_id: u64,
}

impl ReplayBuffer {
    pub fn new(capacity_transitions: usize) -> Self {
        Self {
            capacity_transitions,
            trajectories: VecDeque::new(),
            total_transitions: 0,
            next_id: 0,
        }
    }

    pub fn num_transitions(&self) -> usize {
        self.total_transitions
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrajectoryRecord> {
        self.trajectories.iter()
    }

    pub fn get(&self, id: u64) -> Option<&TrajectoryRecord> {
        self.trajectories.iter().find(|t| t.id == id)
    }

    pub fn max_priority(&self) -> f32 {
        self.trajectories
            .iter()
            .map(|t| t.priority)
            .fold(0.0, f32::max)
    }

    /// Append a trajectory, stamping its id. Evicts whole trajectories FIFO
    /// once the transition capacity is exceeded.
    pub fn store(&mut self, mut trajectory: TrajectoryRecord) -> Result<u64> {
        trajectory.validate()?;
        trajectory.id = self.next_id;
        self.next_id += 1;
        self.total_transitions += trajectory.len();
        let id = trajectory.id;
        self.trajectories.push_back(trajectory);
        while self.total_transitions > self.capacity_transitions && self.trajectories.len() > 1 {
            let evicted = self.trajectories.pop_front().unwrap();
            self.total_transitions -= evicted.len();
        }
        Ok(id)
    }

    fn sample_transition_at(&self, traj: &TrajectoryRecord, step: usize) -> TransitionSample {
        TransitionSample {
            observation: traj.observations[step].clone(),
            action: traj.actions[step].clone(),
            task_reward: traj.task_rewards[step],
            next_observation: traj.observations[step + 1].clone(),
            goal: traj.goal.clone(),
            skill: traj.skill,
            trajectory_id: traj.id,
            step_index: step,
        }
    }

    /// Draw `n` transitions uniformly over all stored transitions.
    pub fn sample_uniform(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<TransitionSample>> {
        if self.is_empty() {
            return Err(Error::Unavailable("replay buffer is empty".into()));
        }
        let mut prefix = Vec::with_capacity(self.trajectories.len());
        let mut acc = 0usize;
        for t in &self.trajectories {
            acc += t.len();
            prefix.push(acc);
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let g = rng.gen_range(0..self.total_transitions);
            let ti = prefix.partition_point(|&p| p <= g);
            let before = if ti == 0 { 0 } else { prefix[ti - 1] };
            let traj = &self.trajectories[ti];
            out.push(self.sample_transition_at(traj, g - before));
        }
        Ok(out)
    }

    /// Draw one whole trajectory uniformly (estimator training source).
    pub fn sample_trajectory_uniform(&self, rng: &mut impl Rng) -> Result<&TrajectoryRecord> {
        if self.is_empty() {
            return Err(Error::Unavailable("replay buffer is empty".into()));
        }
        let i = rng.gen_range(0..self.trajectories.len());
        Ok(&self.trajectories[i])
    }

    /// Per-trajectory sampling probabilities
    /// `P(i) = (priority_i + eps)^alpha / sum_j (priority_j + eps)^alpha`.
    pub fn trajectory_probabilities(&self, cfg: &SamplerConfig) -> Vec<(u64, f64)> {
        let scores: Vec<f64> = self
            .trajectories
            .iter()
            .map(|t| (t.priority as f64 + cfg.epsilon_priority).powf(cfg.alpha))
            .collect();
        let total: f64 = scores.iter().sum();
        self.trajectories
            .iter()
            .zip(scores)
            .map(|(t, s)| (t.id, s / total))
            .collect()
    }

    /// Priority-weighted sampling with normalized importance weights
    /// `w_i = (N * P(i))^(-beta) / max_j (N * P(j))^(-beta)`.
    pub fn sample_prioritized(
        &self,
        n: usize,
        cfg: &SamplerConfig,
        rng: &mut impl Rng,
    ) -> Result<(Vec<TransitionSample>, Vec<f32>)> {
        if self.is_empty() {
            return Err(Error::Unavailable("replay buffer is empty".into()));
        }
        let probs = self.trajectory_probabilities(cfg);
        let n_traj = probs.len() as f64;
        let min_prob = probs
            .iter()
            .map(|&(_, p)| p)
            .fold(f64::INFINITY, f64::min);
        let max_weight = (n_traj * min_prob).powf(-cfg.beta);
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &(_, p) in &probs {
            acc += p;
            cumulative.push(acc);
        }
        let mut out = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen_range(0.0..acc);
            let ti = cumulative
                .partition_point(|&c| c <= u)
                .min(self.trajectories.len() - 1);
            let traj = &self.trajectories[ti];
            let step = rng.gen_range(0..traj.len());
            out.push(self.sample_transition_at(traj, step));
            let w = (n_traj * probs[ti].1).powf(-cfg.beta) / max_weight;
            weights.push(w as f32);
        }
        Ok((out, weights))
    }

    /// Replace priorities for the given trajectory ids. Unknown ids are
    /// skipped with a warning; negative values are clamped to zero.
    pub fn update_priorities(&mut self, ids: &[u64], values: &[f32]) -> Result<()> {
        if ids.len() != values.len() {
            return Err(Error::Usage(
                "priority update ids and values differ in length".into(),
            ));
        }
        for (&id, &value) in ids.iter().zip(values) {
            let value = if value < 0.0 {
                log::warn!("negative priority {value} for trajectory {id}; clamped to 0");
                0.0
            } else {
                value
            };
            match self.trajectories.iter_mut().find(|t| t.id == id) {
                Some(t) => t.priority = value,
                None => log::warn!("priority update for unknown trajectory {id}; ignored"),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn constant_trajectory(len: usize, marker: f32) -> TrajectoryRecord {
        TrajectoryRecord::new(
            vec![vec![marker, 0.0]; len + 1],
            vec![vec![0.0]; len],
            vec![0.5, 0.5],
            vec![0.0; len],
        )
        .unwrap()
    }

    fn chi_square_p(observed: &[usize], expected: &[f64]) -> f64 {
        let stat: f64 = observed
            .iter()
            .zip(expected)
            .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
            .sum();
        let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
        1.0 - dist.cdf(stat)
    }

    #[test]
    fn singleton_buffer_samples_its_only_trajectory() {
        let mut buf = ReplayBuffer::new(1000);
        let id = buf.store(constant_trajectory(5, 7.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = buf.sample_uniform(1, &mut rng).unwrap();
        assert_eq!(batch[0].trajectory_id, id);
        assert_eq!(batch[0].observation[0], 7.0);
    }

    #[test]
    fn fifo_eviction_drops_whole_oldest_trajectory() {
        let mut buf = ReplayBuffer::new(100);
        let first = buf.store(constant_trajectory(50, 1.0)).unwrap();
        let second = buf.store(constant_trajectory(50, 2.0)).unwrap();
        let third = buf.store(constant_trajectory(50, 3.0)).unwrap();
        assert_eq!(buf.num_transitions(), 100);
        assert_eq!(buf.num_trajectories(), 2);
        assert!(buf.get(first).is_none());
        assert!(buf.get(second).is_some());
        assert!(buf.get(third).is_some());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in buf.sample_uniform(200, &mut rng).unwrap() {
            assert_ne!(s.trajectory_id, first);
        }
    }

    #[test]
    fn malformed_trajectory_is_rejected() {
        let bad = TrajectoryRecord::new(
            vec![vec![0.0]; 3],
            vec![vec![0.0]; 3],
            vec![0.0],
            vec![0.0; 2],
        );
        assert!(matches!(bad, Err(Error::Validation(_))));
    }

    #[test]
    fn uniform_sampling_matches_chi_square() {
        let mut buf = ReplayBuffer::new(1000);
        buf.store(constant_trajectory(10, 0.0)).unwrap();
        buf.store(constant_trajectory(10, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = vec![0usize; 20];
        for _ in 0..10_000 {
            let s = &buf.sample_uniform(1, &mut rng).unwrap()[0];
            counts[s.trajectory_id as usize * 10 + s.step_index] += 1;
        }
        let expected = vec![500.0; 20];
        let p = chi_square_p(&counts, &expected);
        assert!(p > 0.01, "chi-square p-value {p}");
    }

    #[test]
    fn empty_request_and_empty_buffer() {
        let mut buf = ReplayBuffer::new(100);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            buf.sample_uniform(1, &mut rng),
            Err(Error::Unavailable(_))
        ));
        buf.store(constant_trajectory(3, 0.0)).unwrap();
        assert!(buf.sample_uniform(0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn equal_priorities_sample_uniformly() {
        let mut buf = ReplayBuffer::new(1000);
        for _ in 0..4 {
            let id = buf.store(constant_trajectory(5, 0.0)).unwrap();
            buf.update_priorities(&[id], &[2.5]).unwrap();
        }
        let cfg = SamplerConfig::default();
        for (_, p) in buf.trajectory_probabilities(&cfg) {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_zero_ignores_priorities() {
        let mut buf = ReplayBuffer::new(1000);
        let a = buf.store(constant_trajectory(5, 0.0)).unwrap();
        let b = buf.store(constant_trajectory(5, 0.0)).unwrap();
        buf.update_priorities(&[a, b], &[0.1, 9.0]).unwrap();
        let cfg = SamplerConfig {
            alpha: 0.0,
            ..SamplerConfig::default()
        };
        for (_, p) in buf.trajectory_probabilities(&cfg) {
            assert!((p - 0.5).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 2];
        for _ in 0..10_000 {
            let (batch, _) = buf.sample_prioritized(1, &cfg, &mut rng).unwrap();
            counts[(batch[0].trajectory_id - a) as usize] += 1;
        }
        let p = chi_square_p(&counts, &[5000.0, 5000.0]);
        assert!(p > 0.01, "chi-square p-value {p}");
    }

    #[test]
    fn prioritized_hand_case_probabilities_and_weights() {
        let mut buf = ReplayBuffer::new(1000);
        let a = buf.store(constant_trajectory(5, 0.0)).unwrap();
        let b = buf.store(constant_trajectory(5, 0.0)).unwrap();
        buf.update_priorities(&[a, b], &[1.0, 3.0]).unwrap();
        let cfg = SamplerConfig {
            alpha: 1.0,
            beta: 0.4,
            epsilon_priority: 0.0,
        };
        let probs = buf.trajectory_probabilities(&cfg);
        assert!((probs[0].1 - 0.25).abs() < 1e-9);
        assert!((probs[1].1 - 0.75).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (batch, weights) = buf.sample_prioritized(4096, &cfg, &mut rng).unwrap();
        let expected_high = 1.0f32;
        let expected_low = 3.0f64.powf(-0.4) as f32;
        for (s, w) in batch.iter().zip(&weights) {
            if s.trajectory_id == a {
                assert!((w - expected_high).abs() < 1e-6);
            } else {
                assert!((w - expected_low).abs() < 1e-6);
            }
            assert!(*w > 0.0 && *w <= 1.0);
        }
    }

    #[test]
    fn zero_priority_is_epsilon_dominated() {
        let mut buf = ReplayBuffer::new(1000);
        let a = buf.store(constant_trajectory(5, 0.0)).unwrap();
        let b = buf.store(constant_trajectory(5, 0.0)).unwrap();
        buf.update_priorities(&[a, b], &[0.0, 1.0]).unwrap();
        let cfg = SamplerConfig {
            alpha: 1.0,
            beta: 0.4,
            epsilon_priority: 1e-6,
        };
        let probs = buf.trajectory_probabilities(&cfg);
        assert!(probs[0].1 < 0.01);
    }

    #[test]
    fn negative_priority_clamps_and_unknown_id_is_ignored() {
        let mut buf = ReplayBuffer::new(1000);
        let a = buf.store(constant_trajectory(5, 0.0)).unwrap();
        buf.update_priorities(&[a, 999], &[-3.0, 1.0]).unwrap();
        assert_eq!(buf.get(a).unwrap().priority, 0.0);
        assert!(buf.get(999).is_none());
    }

    #[test]
    fn updated_priorities_shift_empirical_frequencies() {
        let mut buf = ReplayBuffer::new(1000);
        let a = buf.store(constant_trajectory(5, 0.0)).unwrap();
        let b = buf.store(constant_trajectory(5, 0.0)).unwrap();
        buf.update_priorities(&[a, b], &[1.0, 1.0]).unwrap();
        let cfg = SamplerConfig {
            alpha: 1.0,
            beta: 0.4,
            epsilon_priority: 0.0,
        };
        buf.update_priorities(&[a, b], &[1.0, 4.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut counts = [0usize; 2];
        for _ in 0..10_000 {
            let (batch, _) = buf.sample_prioritized(1, &cfg, &mut rng).unwrap();
            counts[(batch[0].trajectory_id - a) as usize] += 1;
        }
        let p = chi_square_p(&counts, &[2000.0, 8000.0]);
        assert!(p > 0.01, "chi-square p-value {p}");
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut buf = ReplayBuffer::new(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..7 {
            let id = buf.store(constant_trajectory(3 + i, 0.0)).unwrap();
            buf.update_priorities(&[id], &[rng.gen_range(0.0..2.0f32)])
                .unwrap();
        }
        let total: f64 = buf
            .trajectory_probabilities(&SamplerConfig::default())
            .iter()
            .map(|&(_, p)| p)
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
