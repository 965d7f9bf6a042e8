//! Goal-conditioned deterministic actor-critic with Polyak-averaged targets,
//! epsilon-uniform + Gaussian exploration, and an action-norm penalty on the
//! policy objective.

use ndarray::{s, Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mi::standard_normal;
use crate::nn::{adam_step, polyak_update, AdamState, Mlp, MlpSpec, OutputActivation};

/// Exploration schedule: with `random_action_prob` take a uniform action in
/// the box, otherwise add Gaussian noise of scale `gaussian_noise_scale` to
/// the deterministic policy output.
#[derive(Debug, Clone, Copy)]
pub struct ExplorationConfig {
    pub random_action_prob: f32,
    pub gaussian_noise_scale: f32,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            random_action_prob: 0.3,
            gaussian_noise_scale: 0.2,
        }
    }
}

/// Actor, critic, and their Polyak-averaged targets.
#[derive(Debug, Clone)]
pub struct AgentParams {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub gamma: f32,
}

impl AgentParams {
    /// Networks for `input = obs ++ conditioning` where conditioning carries
    /// the goal vector plus any skill one-hot the caller appends.
    pub fn new(
        obs_dim: usize,
        conditioning_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        gamma: f32,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let actor_spec = MlpSpec::with_relu_hidden(
            obs_dim + conditioning_dim,
            hidden,
            action_dim,
            OutputActivation::Tanh,
        )?;
        let critic_spec = MlpSpec::with_relu_hidden(
            obs_dim + conditioning_dim + action_dim,
            hidden,
            1,
            OutputActivation::Linear,
        )?;
        let actor = Mlp::init(actor_spec, rng);
        let critic = Mlp::init(critic_spec, rng);
        Ok(Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            gamma,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn obs_cond_dim(&self) -> usize {
        self.actor.input_dim()
    }
}

/// Per-network Adam states for one agent.
#[derive(Debug, Clone)]
pub struct AgentOptimizers {
    pub actor: AdamState,
    pub critic: AdamState,
}

impl AgentOptimizers {
    pub fn new(params: &AgentParams, actor_lr: f32, critic_lr: f32) -> Self {
        Self {
            actor: AdamState::for_net(&params.actor, actor_lr),
            critic: AdamState::for_net(&params.critic, critic_lr),
        }
    }
}

fn concat_row(obs: &[f32], cond: &[f32]) -> Array2<f32> {
    let mut row = Array2::zeros((1, obs.len() + cond.len()));
    for (c, v) in obs.iter().chain(cond.iter()).enumerate() {
        row[[0, c]] = *v;
    }
    row
}

fn hstack(parts: &[&Array2<f32>]) -> Array2<f32> {
    let rows = parts[0].nrows();
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut offset = 0;
    for p in parts {
        out.slice_mut(s![.., offset..offset + p.ncols()]).assign(p);
        offset += p.ncols();
    }
    out
}

/// Select an action. `explore = false` returns the deterministic policy
/// output; otherwise the exploration schedule applies. Output coordinates
/// always land in `[-1, 1]`.
pub fn act(
    params: &AgentParams,
    observation: &[f32],
    conditioning: &[f32],
    explore: bool,
    cfg: &ExplorationConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f32>> {
    let dim = params.action_dim();
    if explore && rng.gen::<f32>() < cfg.random_action_prob {
        return Ok((0..dim).map(|_| rng.gen_range(-1.0..=1.0f32)).collect());
    }
    let input = concat_row(observation, conditioning);
    let out = params.actor.forward(&input)?;
    let mut action: Vec<f32> = out.row(0).to_vec();
    if explore {
        for a in &mut action {
            *a += cfg.gaussian_noise_scale * standard_normal(rng) as f32;
        }
    }
    for a in &mut action {
        *a = a.clamp(-1.0, 1.0);
    }
    Ok(action)
}

/// One batch of transitions prepared for an update. `goals` carries the full
/// conditioning (goal vector plus optional skill one-hot); rewards are
/// already composed by the caller.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub obs: Array2<f32>,
    pub goals: Array2<f32>,
    pub actions: Array2<f32>,
    pub rewards: Array1<f32>,
    pub next_obs: Array2<f32>,
    pub dones: Vec<bool>,
    pub weights: Option<Array1<f32>>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.nrows() == 0
    }

    fn validate(&self, params: &AgentParams) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Usage("update batch is empty".into()));
        }
        let n = self.len();
        if self.goals.nrows() != n
            || self.actions.nrows() != n
            || self.rewards.len() != n
            || self.next_obs.nrows() != n
            || self.dones.len() != n
        {
            return Err(Error::Dimension("batch fields have differing lengths".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != n {
                return Err(Error::Dimension("weight count differs from batch".into()));
            }
        }
        if self.obs.ncols() + self.goals.ncols() != params.obs_cond_dim() {
            return Err(Error::Dimension(
                "obs + conditioning width does not match the actor input".into(),
            ));
        }
        Ok(())
    }
}

/// Bootstrapped critic targets
/// `y = r + gamma * (1 - done) * Q_target(s', g, actor_target(s', g))`,
/// clipped to `[-1/(1-gamma), 1/(1-gamma)]`.
pub fn critic_target_value(params: &AgentParams, batch: &TransitionBatch) -> Result<Array1<f32>> {
    batch.validate(params)?;
    let next_in = hstack(&[&batch.next_obs, &batch.goals]);
    let next_actions = params.actor_target.forward(&next_in)?;
    let next_q_in = hstack(&[&batch.next_obs, &batch.goals, &next_actions]);
    let next_q = params.critic_target.forward(&next_q_in)?;
    let q_limit = if params.gamma < 1.0 {
        1.0 / (1.0 - params.gamma)
    } else {
        f32::INFINITY
    };
    let mut y = Array1::zeros(batch.len());
    for i in 0..batch.len() {
        let bootstrap = if batch.dones[i] { 0.0 } else { next_q[[i, 0]] };
        y[i] = (batch.rewards[i] + params.gamma * bootstrap).clamp(-q_limit, q_limit);
    }
    Ok(y)
}

/// Diagnostics from one update step.
#[derive(Debug, Clone, Copy)]
pub struct UpdateLosses {
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub mean_q: f64,
}

/// One critic step on the weighted squared Bellman error, one actor step on
/// `Q(s, g, actor(s, g)) - action_l2 * ||action||^2`, then a Polyak update of
/// both targets. Non-finite losses reject the whole update.
pub fn update(
    params: &mut AgentParams,
    batch: &TransitionBatch,
    optimizers: &mut AgentOptimizers,
    polyak_coefficient: f32,
    action_l2: f32,
) -> Result<UpdateLosses> {
    let y = critic_target_value(params, batch)?;
    let n = batch.len();
    let inv_n = 1.0 / n as f32;

    let snapshot = (
        params.actor.clone(),
        params.critic.clone(),
        optimizers.actor.clone(),
        optimizers.critic.clone(),
    );
    let restore = |params: &mut AgentParams, optimizers: &mut AgentOptimizers| {
        params.actor = snapshot.0.clone();
        params.critic = snapshot.1.clone();
        optimizers.actor = snapshot.2.clone();
        optimizers.critic = snapshot.3.clone();
    };

    // Critic step.
    let q_in = hstack(&[&batch.obs, &batch.goals, &batch.actions]);
    let (q, q_cache) = params.critic.forward_cached(&q_in)?;
    let mut critic_loss = 0.0f64;
    let mut upstream = Array2::zeros((n, 1));
    for i in 0..n {
        let w = batch.weights.as_ref().map_or(1.0, |w| w[i]);
        let diff = q[[i, 0]] - y[i];
        critic_loss += (w * diff * diff) as f64;
        upstream[[i, 0]] = 2.0 * w * diff * inv_n;
    }
    critic_loss /= n as f64;
    if !critic_loss.is_finite() {
        return Err(Error::Numeric(format!(
            "critic loss is not finite ({critic_loss}); batch rewards min/max {:?}",
            min_max(&batch.rewards)
        )));
    }
    let critic_grads = params.critic.backward(&q_cache, &upstream)?;
    if let Err(e) = adam_step(&mut params.critic, &critic_grads, &mut optimizers.critic) {
        restore(params, optimizers);
        return Err(e);
    }

    // Actor step against the updated critic.
    let pi_in = hstack(&[&batch.obs, &batch.goals]);
    let (actions, actor_cache) = params.actor.forward_cached(&pi_in)?;
    let qa_in = hstack(&[&batch.obs, &batch.goals, &actions]);
    let (qa, qa_cache) = params.critic.forward_cached(&qa_in)?;
    let mean_q = qa.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let l2 = actions.iter().map(|&a| (a * a) as f64).sum::<f64>() / n as f64;
    let actor_objective = mean_q - action_l2 as f64 * l2;
    if !actor_objective.is_finite() {
        restore(params, optimizers);
        return Err(Error::Numeric(format!(
            "actor objective is not finite (mean_q {mean_q}, l2 {l2})"
        )));
    }
    // d(-objective)/dQ = -1/n per row, chained through the critic input.
    let up_q = Array2::from_elem((n, 1), -inv_n);
    let critic_input_grads = params.critic.backward(&qa_cache, &up_q)?;
    let action_cols = batch.obs.ncols() + batch.goals.ncols();
    let mut up_actions = critic_input_grads
        .input
        .slice(s![.., action_cols..])
        .to_owned();
    up_actions
        .zip_mut_with(&actions, |g, &a| *g += 2.0 * action_l2 * a * inv_n);
    let actor_grads = params.actor.backward(&actor_cache, &up_actions)?;
    if let Err(e) = adam_step(&mut params.actor, &actor_grads, &mut optimizers.actor) {
        restore(params, optimizers);
        return Err(e);
    }

    polyak_update(&mut params.actor_target, &params.actor, polyak_coefficient)?;
    polyak_update(&mut params.critic_target, &params.critic, polyak_coefficient)?;

    Ok(UpdateLosses {
        critic_loss,
        actor_objective,
        mean_q,
    })
}

fn min_max(v: &Array1<f32>) -> (f32, f32) {
    v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |acc, &x| {
        (acc.0.min(x), acc.1.max(x))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_agent(rng: &mut impl Rng) -> AgentParams {
        AgentParams::new(2, 1, 2, &[4], 0.98, rng).unwrap()
    }

    fn small_batch(rng: &mut impl Rng, n: usize) -> TransitionBatch {
        TransitionBatch {
            obs: Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0f32)),
            goals: Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0f32)),
            actions: Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0f32)),
            rewards: Array1::from_shape_fn(n, |_| rng.gen_range(0.0..1.0f32)),
            next_obs: Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0f32)),
            dones: (0..n).map(|i| i % 4 == 0).collect(),
            weights: None,
        }
    }

    #[test]
    fn deterministic_act_repeats_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = small_agent(&mut rng);
        let cfg = ExplorationConfig::default();
        let a = act(&params, &[0.1, 0.2], &[0.3], false, &cfg, &mut rng).unwrap();
        let b = act(&params, &[0.1, 0.2], &[0.3], false, &cfg, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    /// Kolmogorov asymptotic tail probability.
    fn ks_p_value(d: f64, n: usize) -> f64 {
        let lambda = ((n as f64).sqrt() + 0.12 + 0.11 / (n as f64).sqrt()) * d;
        let mut p = 0.0;
        for k in 1..=100 {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            p += 2.0 * sign * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        }
        p.clamp(0.0, 1.0)
    }

    fn ks_against_uniform(samples: &mut [f64]) -> f64 {
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = samples.len();
        let mut d = 0.0f64;
        for (i, &x) in samples.iter().enumerate() {
            let cdf = (x + 1.0) / 2.0;
            d = d.max(((i + 1) as f64 / n as f64 - cdf).abs());
            d = d.max((cdf - i as f64 / n as f64).abs());
        }
        ks_p_value(d, n)
    }

    #[test]
    fn fully_random_exploration_is_uniform_over_the_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = small_agent(&mut rng);
        let cfg = ExplorationConfig {
            random_action_prob: 1.0,
            gaussian_noise_scale: 0.2,
        };
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..10_000 {
            let a = act(&params, &[0.1, 0.2], &[0.3], true, &cfg, &mut rng).unwrap();
            xs.push(a[0] as f64);
            ys.push(a[1] as f64);
        }
        assert!(ks_against_uniform(&mut xs) > 0.01);
        assert!(ks_against_uniform(&mut ys) > 0.01);
    }

    #[test]
    fn exploratory_actions_stay_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = small_agent(&mut rng);
        let cfg = ExplorationConfig::default();
        for _ in 0..10_000 {
            let a = act(&params, &[0.9, -0.9], &[0.5], true, &cfg, &mut rng).unwrap();
            assert!(a.iter().all(|v| *v >= -1.0 && *v <= 1.0));
        }
    }

    #[test]
    fn target_value_terminal_and_zero_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = small_agent(&mut rng);
        let mut batch = small_batch(&mut rng, 8);
        batch.dones = vec![true; 8];
        let y = critic_target_value(&params, &batch).unwrap();
        for i in 0..8 {
            assert!((y[i] - batch.rewards[i]).abs() < 1e-6);
        }
        params.gamma = 0.0;
        let mut batch = small_batch(&mut rng, 8);
        batch.dones = vec![false; 8];
        let y = critic_target_value(&params, &batch).unwrap();
        for i in 0..8 {
            assert!((y[i] - batch.rewards[i].min(1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn target_value_hand_case() {
        // r = 1, gamma = 0.98, target critic forced to 0.5 -> y = 1.49.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = small_agent(&mut rng);
        params.critic_target = Mlp::zeros(params.critic_target.spec().clone());
        let mut tensors = params.critic_target.to_tensors();
        let last_bias = tensors.len() - 1;
        tensors[last_bias].values[0] = 0.5;
        params.critic_target =
            Mlp::from_tensors(params.critic_target.spec().clone(), &tensors).unwrap();
        let mut batch = small_batch(&mut rng, 1);
        batch.rewards[0] = 1.0;
        batch.dones = vec![false];
        let y = critic_target_value(&params, &batch).unwrap();
        assert!((y[0] - 1.49).abs() < 1e-6);
    }

    #[test]
    fn unit_weights_match_absent_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = small_agent(&mut rng);
        let batch = small_batch(&mut rng, 16);
        let mut weighted = batch.clone();
        weighted.weights = Some(Array1::from_elem(16, 1.0));

        let mut p1 = params.clone();
        let mut o1 = AgentOptimizers::new(&p1, 1e-3, 1e-3);
        let l1 = update(&mut p1, &batch, &mut o1, 0.95, 1.0).unwrap();

        let mut p2 = params.clone();
        let mut o2 = AgentOptimizers::new(&p2, 1e-3, 1e-3);
        let l2 = update(&mut p2, &weighted, &mut o2, 0.95, 1.0).unwrap();

        assert_eq!(l1.critic_loss, l2.critic_loss);
        assert_eq!(p1.critic, p2.critic);
    }

    #[test]
    fn zero_learning_rate_is_a_fixpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = small_agent(&mut rng);
        let before = params.clone();
        let mut opts = AgentOptimizers::new(&params, 0.0, 0.0);
        let batch = small_batch(&mut rng, 8);
        update(&mut params, &batch, &mut opts, 0.95, 1.0).unwrap();
        update(&mut params, &batch, &mut opts, 0.95, 1.0).unwrap();
        assert_eq!(params.actor, before.actor);
        assert_eq!(params.critic, before.critic);
        // Targets started equal to online nets, so Polyak leaves them put.
        assert_eq!(params.actor_target, before.actor_target);
        assert_eq!(params.critic_target, before.critic_target);
    }

    #[test]
    fn non_finite_reward_rejects_update_without_mutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = small_agent(&mut rng);
        let before = params.clone();
        let mut opts = AgentOptimizers::new(&params, 1e-3, 1e-3);
        let mut batch = small_batch(&mut rng, 4);
        batch.rewards[2] = f32::NAN;
        assert!(matches!(
            update(&mut params, &batch, &mut opts, 0.95, 1.0),
            Err(Error::Numeric(_))
        ));
        assert_eq!(params.actor, before.actor);
        assert_eq!(params.critic, before.critic);
        assert_eq!(opts.critic.step_count(), 0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = small_agent(&mut rng);
        let batch = TransitionBatch {
            obs: Array2::zeros((0, 2)),
            goals: Array2::zeros((0, 1)),
            actions: Array2::zeros((0, 2)),
            rewards: Array1::zeros(0),
            next_obs: Array2::zeros((0, 2)),
            dones: vec![],
            weights: None,
        };
        assert!(matches!(
            critic_target_value(&params, &batch),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = small_agent(&mut rng);
        let batch = small_batch(&mut rng, 5);
        let action_l2 = 1.0f32;

        // Analytic actor gradient, mirroring the update path.
        let pi_in = hstack(&[&batch.obs, &batch.goals]);
        let (actions, actor_cache) = params.actor.forward_cached(&pi_in).unwrap();
        let qa_in = hstack(&[&batch.obs, &batch.goals, &actions]);
        let (_, qa_cache) = params.critic.forward_cached(&qa_in).unwrap();
        let n = batch.len();
        let inv_n = 1.0 / n as f32;
        let up_q = Array2::from_elem((n, 1), -inv_n);
        let cig = params.critic.backward(&qa_cache, &up_q).unwrap();
        let action_cols = batch.obs.ncols() + batch.goals.ncols();
        let mut up_actions = cig.input.slice(s![.., action_cols..]).to_owned();
        up_actions.zip_mut_with(&actions, |g, &a| *g += 2.0 * action_l2 * a * inv_n);
        let analytic = params.actor.backward(&actor_cache, &up_actions).unwrap();

        // Numeric gradient of the negated objective, evaluated through the
        // f64 reference path for both networks.
        use crate::nn::reference;
        let critic_ref = reference::ReferenceNet::from_mlp(&params.critic);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| pi_in.row(i).iter().map(|&v| v as f64).collect())
            .collect();
        let numeric = reference::finite_difference_grads(&params.actor, 1e-6, |probe| {
            let mut mean_q = 0.0;
            let mut l2 = 0.0;
            for row in &rows {
                let a = probe.forward(row);
                let mut q_in = row.clone();
                q_in.extend(&a);
                mean_q += critic_ref.forward(&q_in)[0];
                l2 += a.iter().map(|v| v * v).sum::<f64>();
            }
            -((mean_q - action_l2 as f64 * l2) / n as f64)
        });
        let analytic_flat = reference::flatten_grads(&analytic);
        let err = reference::max_relative_error(&analytic_flat, &numeric, 1e-3);
        assert!(err < 1e-3, "actor gradient max relative error {err}");
    }

    #[test]
    fn polyak_lag_shrinks_toward_frozen_online_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut params = small_agent(&mut rng);
        // Desynchronize the targets.
        params.actor_target = Mlp::init(params.actor.spec().clone(), &mut rng);
        let gap = |p: &AgentParams| {
            let a = p.actor.to_tensors();
            let t = p.actor_target.to_tensors();
            a.iter()
                .zip(&t)
                .flat_map(|(x, y)| x.values.iter().zip(&y.values))
                .map(|(x, y)| (x - y).abs() as f64)
                .sum::<f64>()
        };
        let before = gap(&params);
        let mut opts = AgentOptimizers::new(&params, 0.0, 0.0);
        let batch = small_batch(&mut rng, 8);
        update(&mut params, &batch, &mut opts, 0.95, 1.0).unwrap();
        let after = gap(&params);
        assert!(after <= before);
        assert!(after >= before * 0.94 && after <= before * 0.96);
    }
}
