//! Neural mutual-information machinery: the Donsker-Varadhan lower bound, a
//! statistics network trained on whole trajectories with bias-corrected
//! gradients, and the per-transition reward evaluated on adjacent state
//! pairs with an optional scale and clip.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::env::{split_observation, StateSplit};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Mlp, MlpSpec, OutputActivation};
use crate::replay::TrajectoryRecord;

/// Reward shaping applied to raw per-transition bounds.
#[derive(Debug, Clone)]
pub struct MiConfig {
    /// Multiplier applied to the raw bound before clipping.
    pub reward_scale: f64,
    pub clip_low: f64,
    pub clip_high: f64,
    pub estimator_lr: f32,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            reward_scale: 5000.0,
            clip_low: 0.0,
            clip_high: 1.0,
            estimator_lr: 1e-3,
        }
    }
}

impl MiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reward_scale > 0.0) {
            return Err(Error::Config("reward_scale must be positive".into()));
        }
        if !(self.clip_low < self.clip_high) {
            return Err(Error::Config("clip_low must be below clip_high".into()));
        }
        if !(self.estimator_lr > 0.0) {
            return Err(Error::Config("estimator_lr must be positive".into()));
        }
        Ok(())
    }
}

/// An empirical Donsker-Varadhan bound value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    pub value_nats: f64,
    pub n_joint_samples: usize,
    pub n_marginal_samples: usize,
}

/// Scalar statistics network `T(s_surrounding, s_agent)` with the running
/// denominator estimate used for bias-corrected gradients.
#[derive(Debug, Clone)]
pub struct StatisticsNetwork {
    pub mlp: Mlp,
    pub ema_denominator: f64,
    pub ema_decay: f64,
}

impl StatisticsNetwork {
    pub fn new(mlp: Mlp) -> Result<Self> {
        if mlp.output_dim() != 1 {
            return Err(Error::Dimension(
                "statistics network must output a single scalar".into(),
            ));
        }
        if mlp.spec().output_activation != OutputActivation::Linear {
            return Err(Error::Usage(
                "statistics network output must be linear".into(),
            ));
        }
        Ok(Self {
            mlp,
            ema_denominator: 1.0,
            ema_decay: 0.99,
        })
    }

    pub fn init(
        surrounding_dim: usize,
        agent_dim: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spec = MlpSpec::with_relu_hidden(
            surrounding_dim + agent_dim,
            hidden,
            1,
            OutputActivation::Linear,
        )?;
        Self::new(Mlp::init(spec, rng))
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    /// `T` values for row-aligned (surrounding, agent-slot) pairs.
    pub fn evaluate_pairs(
        &self,
        surrounding: &Array2<f32>,
        agent_slot: &Array2<f32>,
    ) -> Result<Array1<f32>> {
        let input = concat_pairs(surrounding, agent_slot, self.input_dim())?;
        Ok(self.mlp.forward(&input)?.index_axis(Axis(1), 0).to_owned())
    }
}

fn concat_pairs(
    left: &Array2<f32>,
    right: &Array2<f32>,
    expected_cols: usize,
) -> Result<Array2<f32>> {
    if left.nrows() != right.nrows() {
        return Err(Error::Dimension(
            "pair batches have different lengths".into(),
        ));
    }
    if left.ncols() + right.ncols() != expected_cols {
        return Err(Error::Dimension(format!(
            "pair dimensions {}+{} do not match network input {}",
            left.ncols(),
            right.ncols(),
            expected_cols
        )));
    }
    let mut out = Array2::zeros((left.nrows(), expected_cols));
    out.slice_mut(ndarray::s![.., ..left.ncols()]).assign(left);
    out.slice_mut(ndarray::s![.., left.ncols()..]).assign(right);
    Ok(out)
}

/// `log(mean(exp(x)))`, stabilized so that large statistics never overflow.
fn log_mean_exp(values: &[f32]) -> f64 {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let sum: f64 = values.iter().map(|&v| ((v as f64) - max).exp()).sum();
    max + (sum / values.len() as f64).ln()
}

/// Empirical Donsker-Varadhan bound:
/// `mean(t_joint) - log(mean(exp(t_marginal)))`.
pub fn dv_bound(t_joint: &[f32], t_marginal: &[f32]) -> Result<MiEstimate> {
    if t_joint.is_empty() || t_marginal.is_empty() {
        return Err(Error::Usage("dv_bound needs non-empty sample arrays".into()));
    }
    if t_joint.iter().chain(t_marginal).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite statistic value".into()));
    }
    let joint_mean = t_joint.iter().map(|&v| v as f64).sum::<f64>() / t_joint.len() as f64;
    Ok(MiEstimate {
        value_nats: joint_mean - log_mean_exp(t_marginal),
        n_joint_samples: t_joint.len(),
        n_marginal_samples: t_marginal.len(),
    })
}

/// Fisher-Yates permutation of `0..n` drawn from `rng`.
pub fn permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Shuffle a sequence of agent states along the temporal axis. Pairing the
/// result with in-order surrounding states yields product-of-marginals
/// samples within the trajectory.
pub fn marginal_shuffle(agent_states: &[Vec<f32>], rng: &mut impl Rng) -> Vec<Vec<f32>> {
    let perm = permutation(agent_states.len(), rng);
    perm.into_iter()
        .map(|i| agent_states[i].clone())
        .collect()
}

fn select_rows(m: &Array2<f32>, perm: &[usize]) -> Array2<f32> {
    let mut out = Array2::zeros((perm.len(), m.ncols()));
    for (row, &src) in perm.iter().enumerate() {
        out.row_mut(row).assign(&m.row(src));
    }
    out
}

/// Split every observation of a trajectory into (surrounding, agent) matrices.
pub fn split_trajectory(
    observations: &[Vec<f32>],
    split: &StateSplit,
) -> Result<(Array2<f32>, Array2<f32>)> {
    if observations.is_empty() {
        return Err(Error::Usage("trajectory has no observations".into()));
    }
    let d_s = split.surrounding_indices().len();
    let d_a = split.agent_indices().len();
    let mut surr = Array2::zeros((observations.len(), d_s));
    let mut agent = Array2::zeros((observations.len(), d_a));
    for (row, obs) in observations.iter().enumerate() {
        let (a, s) = split_observation(obs, split)?;
        for (c, v) in s.iter().enumerate() {
            surr[[row, c]] = *v;
        }
        for (c, v) in a.iter().enumerate() {
            agent[[row, c]] = *v;
        }
    }
    Ok((surr, agent))
}

/// One gradient-ascent step on the trajectory-level bound over row-aligned
/// (surrounding, agent-slot) sample matrices. Returns the pre-update bound.
///
/// The gradient of the log-denominator uses the running EMA of `E[e^T]`
/// rather than the minibatch mean; the returned bound is uncorrected.
pub fn train_on_pairs(
    net: &mut StatisticsNetwork,
    surrounding: &Array2<f32>,
    agent_slot: &Array2<f32>,
    optimizer: &mut AdamState,
    rng: &mut impl Rng,
) -> Result<f64> {
    let n = surrounding.nrows();
    if n < 2 {
        return Err(Error::Usage(
            "estimator training needs at least two sample pairs".into(),
        ));
    }
    let perm = permutation(n, rng);
    let shuffled_agent = select_rows(agent_slot, &perm);

    let joint_in = concat_pairs(surrounding, agent_slot, net.input_dim())?;
    let marg_in = concat_pairs(surrounding, &shuffled_agent, net.input_dim())?;
    let (joint_out, joint_cache) = net.mlp.forward_cached(&joint_in)?;
    let (marg_out, marg_cache) = net.mlp.forward_cached(&marg_in)?;
    let t_joint: Vec<f32> = joint_out.index_axis(Axis(1), 0).to_vec();
    let t_marg: Vec<f32> = marg_out.index_axis(Axis(1), 0).to_vec();

    let bound = dv_bound(&t_joint, &t_marg)?.value_nats;

    let batch_mean_exp = t_marg.iter().map(|&v| (v as f64).exp()).sum::<f64>() / n as f64;
    net.ema_denominator =
        (net.ema_decay * net.ema_denominator + (1.0 - net.ema_decay) * batch_mean_exp).max(1e-12);

    let inv_n = 1.0 / n as f64;
    let up_joint = Array2::from_elem((n, 1), inv_n as f32);
    let denom = net.ema_denominator;
    let up_marg = Array2::from_shape_fn((n, 1), |(i, _)| {
        (-((t_marg[i] as f64).exp()) * inv_n / denom) as f32
    });

    let mut grads = net.mlp.backward(&joint_cache, &up_joint)?;
    let marg_grads = net.mlp.backward(&marg_cache, &up_marg)?;
    grads.add(&marg_grads)?;
    // Adam minimizes; negate for ascent on the bound.
    grads.scale(-1.0);
    adam_step(&mut net.mlp, &grads, optimizer)?;
    Ok(bound)
}

/// Trajectory-batch estimator update: every observation of the trajectory
/// contributes one joint sample, temporally shuffled agent states provide the
/// marginal samples.
pub fn train_estimator_step(
    net: &mut StatisticsNetwork,
    trajectory: &TrajectoryRecord,
    split: &StateSplit,
    optimizer: &mut AdamState,
    rng: &mut impl Rng,
) -> Result<f64> {
    if trajectory.len() < 2 {
        return Err(Error::Usage(
            "estimator training needs a trajectory of at least two transitions".into(),
        ));
    }
    let (surr, agent) = split_trajectory(&trajectory.observations, split)?;
    train_on_pairs(net, &surr, &agent, optimizer, rng)
}

/// Evaluate (without updating) the trajectory-level bound on one trajectory.
pub fn trajectory_bound(
    net: &StatisticsNetwork,
    surrounding: &Array2<f32>,
    agent_slot: &Array2<f32>,
    rng: &mut impl Rng,
) -> Result<f64> {
    let n = surrounding.nrows();
    if n < 2 {
        return Err(Error::Usage("bound evaluation needs at least two pairs".into()));
    }
    let perm = permutation(n, rng);
    let shuffled = select_rows(agent_slot, &perm);
    let t_joint = net.evaluate_pairs(surrounding, agent_slot)?;
    let t_marg = net.evaluate_pairs(surrounding, &shuffled)?;
    Ok(dv_bound(t_joint.as_slice().unwrap(), t_marg.as_slice().unwrap())?.value_nats)
}

/// Raw two-sample fraction bound shared by the state-pair and action-pair
/// rewards: joints are the in-order pairs, marginals the cross pairs.
pub fn pair_fraction_bound(
    net: &StatisticsNetwork,
    surr_0: &[f32],
    slot_0: &[f32],
    surr_1: &[f32],
    slot_1: &[f32],
) -> Result<f64> {
    if surr_0.len() != surr_1.len() || slot_0.len() != slot_1.len() {
        return Err(Error::Dimension("pair halves have different widths".into()));
    }
    let d = surr_0.len() + slot_0.len();
    if d != net.input_dim() {
        return Err(Error::Dimension(format!(
            "pair width {} does not match network input {}",
            d,
            net.input_dim()
        )));
    }
    let mut input = Array2::zeros((4, d));
    for (row, (s, a)) in [
        (surr_0, slot_0),
        (surr_1, slot_1),
        (surr_0, slot_1),
        (surr_1, slot_0),
    ]
    .iter()
    .enumerate()
    {
        for (c, v) in s.iter().chain(a.iter()).enumerate() {
            input[[row, c]] = *v;
        }
    }
    let t = net.mlp.forward(&input)?;
    let joint = 0.5 * (t[[0, 0]] as f64 + t[[1, 0]] as f64);
    let cross = log_mean_exp(&[t[[2, 0]], t[[3, 0]]]);
    Ok(joint - cross)
}

/// Raw, scaled, and clipped views of one transition reward.
#[derive(Debug, Clone, Copy)]
pub struct TransitionReward {
    pub raw_nats: f64,
    pub scaled: f64,
    pub clipped: f32,
}

/// Per-transition reward: the fraction bound over the adjacent state pair,
/// with agent states cross-paired for the marginal term, then scaled and
/// clipped per `cfg`.
pub fn transition_reward_detail(
    net: &StatisticsNetwork,
    state_t: &[f32],
    state_t1: &[f32],
    split: &StateSplit,
    cfg: &MiConfig,
) -> Result<TransitionReward> {
    let (agent_t, surr_t) = split_observation(state_t, split)?;
    let (agent_t1, surr_t1) = split_observation(state_t1, split)?;
    let raw = pair_fraction_bound(net, &surr_t, &agent_t, &surr_t1, &agent_t1)?;
    let scaled = cfg.reward_scale * raw;
    Ok(TransitionReward {
        raw_nats: raw,
        scaled,
        clipped: scaled.clamp(cfg.clip_low, cfg.clip_high) as f32,
    })
}

pub fn transition_reward(
    net: &StatisticsNetwork,
    state_t: &[f32],
    state_t1: &[f32],
    split: &StateSplit,
    cfg: &MiConfig,
) -> Result<f32> {
    Ok(transition_reward_detail(net, state_t, state_t1, split, cfg)?.clipped)
}

/// Closed-form MI of jointly Gaussian pairs with per-dimension correlation
/// `rho`: `-0.5 * dims * ln(1 - rho^2)` nats.
pub fn analytic_gaussian_mi(rho: f64, dims: usize) -> Result<f64> {
    if dims == 0 {
        return Err(Error::Domain("dims must be positive".into()));
    }
    if rho.abs() >= 1.0 {
        return Err(Error::Domain(format!("|rho| must be below 1, got {rho}")));
    }
    Ok(-0.5 * dims as f64 * (1.0 - rho * rho).ln())
}

/// One standard normal draw (Box-Muller).
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `n` samples of `dims`-dimensional Gaussian pairs with per-dimension
/// correlation `rho`.
pub fn correlated_gaussian_pairs(
    rho: f64,
    n: usize,
    dims: usize,
    rng: &mut impl Rng,
) -> (Array2<f32>, Array2<f32>) {
    let mut x = Array2::zeros((n, dims));
    let mut y = Array2::zeros((n, dims));
    let noise = (1.0 - rho * rho).sqrt();
    for i in 0..n {
        for d in 0..dims {
            let z1 = standard_normal(rng);
            let z2 = standard_normal(rng);
            x[[i, d]] = z1 as f32;
            y[[i, d]] = (rho * z1 + noise * z2) as f32;
        }
    }
    (x, y)
}

/// Train a fresh estimator on correlated-Gaussian batches and return the
/// converged bound evaluated on held-out batches.
pub fn gaussian_benchmark(
    rho: f64,
    steps: usize,
    batch: usize,
    hidden: &[usize],
    lr: f32,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut net = StatisticsNetwork::init(1, 1, hidden, rng)?;
    let mut opt = AdamState::for_net(&net.mlp, lr);
    for _ in 0..steps {
        let (x, y) = correlated_gaussian_pairs(rho, batch, 1, rng);
        train_on_pairs(&mut net, &x, &y, &mut opt, rng)?;
    }
    let evals = 4;
    let mut total = 0.0;
    for _ in 0..evals {
        let (x, y) = correlated_gaussian_pairs(rho, batch.max(1024), 1, rng);
        total += trajectory_bound(&net, &x, &y, rng)?;
    }
    Ok(total / evals as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StateSplit;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_net(c: f32, surr_dim: usize, agent_dim: usize) -> StatisticsNetwork {
        let spec = MlpSpec::new(
            vec![surr_dim + agent_dim, 1],
            Activation::Relu,
            OutputActivation::Linear,
        )
        .unwrap();
        let mut mlp = Mlp::zeros(spec);
        let tensors = {
            let mut t = mlp.to_tensors();
            t[1].values[0] = c;
            t
        };
        mlp = Mlp::from_tensors(mlp.spec().clone(), &tensors).unwrap();
        StatisticsNetwork::new(mlp).unwrap()
    }

    /// T = 0.5 * |surr[0] + slot[0]| via two ReLU units; separates the
    /// in-order pairs from the cross pairs in the hand-arithmetic case.
    fn absolute_sum_net() -> StatisticsNetwork {
        let spec = MlpSpec::new(
            vec![4, 2, 1],
            Activation::Relu,
            OutputActivation::Linear,
        )
        .unwrap();
        let mut mlp = Mlp::zeros(spec.clone());
        let mut tensors = mlp.to_tensors();
        // w0: rows are [surr0, surr1, slot0, slot1], cols the two hidden units.
        tensors[0].values = vec![1.0, -1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0];
        tensors[2].values = vec![0.5, 0.5];
        mlp = Mlp::from_tensors(spec, &tensors).unwrap();
        StatisticsNetwork::new(mlp).unwrap()
    }

    #[test]
    fn dv_bound_constant_statistic_cancels() {
        for &c in &[-3.0f32, 0.0, 7.5] {
            let est = dv_bound(&[c; 5], &[c; 5]).unwrap();
            assert!(est.value_nats.abs() < 1e-6);
        }
    }

    #[test]
    fn dv_bound_hand_cases() {
        let est = dv_bound(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((est.value_nats - 1.0).abs() < 1e-6);
        let est = dv_bound(&[0.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!((est.value_nats - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dv_bound_rejects_empty_and_non_finite() {
        assert!(matches!(dv_bound(&[], &[0.0]), Err(Error::Usage(_))));
        assert!(matches!(dv_bound(&[0.0], &[]), Err(Error::Usage(_))));
        assert!(matches!(
            dv_bound(&[f32::NAN], &[0.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn dv_bound_is_stable_for_large_statistics() {
        let est = dv_bound(&[80.0, 79.0], &[80.0, 80.0, -80.0]).unwrap();
        assert!(est.value_nats.is_finite());
        let est = dv_bound(&[-80.0], &[80.0]).unwrap();
        assert!(est.value_nats.is_finite());
    }

    #[test]
    fn dv_bound_is_order_invariant() {
        let j = [0.3f32, -1.2, 2.0, 0.7];
        let m = [0.1f32, 0.9, -0.4];
        let a = dv_bound(&j, &m).unwrap().value_nats;
        let j2 = [2.0f32, 0.3, 0.7, -1.2];
        let m2 = [-0.4f32, 0.1, 0.9];
        let b = dv_bound(&j2, &m2).unwrap().value_nats;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn shuffle_of_single_element_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = marginal_shuffle(&[vec![1.0, 2.0]], &mut rng);
        assert_eq!(out, vec![vec![1.0, 2.0]]);
    }

    #[test]
    fn shuffle_preserves_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input: Vec<Vec<f32>> = (0..17).map(|i| vec![i as f32]).collect();
        let mut out = marginal_shuffle(&input, &mut rng);
        out.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(out, input);
    }

    #[test]
    fn shuffle_fixture_seed_42() {
        // Frozen output of the Fisher-Yates walk under ChaCha8(42).
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let input = vec![vec![1.0f32], vec![2.0], vec![3.0], vec![4.0]];
        let out = marginal_shuffle(&input, &mut rng);
        let got: Vec<f32> = out.iter().map(|v| v[0]).collect();
        assert_eq!(got, shuffle_fixture_expected());
        // Stable across repeated runs with the same seed.
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let out2 = marginal_shuffle(&input, &mut rng2);
        assert_eq!(out, out2);
    }

    fn shuffle_fixture_expected() -> Vec<f32> {
        vec![4.0, 3.0, 1.0, 2.0]
    }

    #[test]
    fn transition_reward_constant_network_is_zero() {
        let net = constant_net(2.5, 2, 2);
        let split = StateSplit::new(vec![0, 1], vec![2, 3], 4).unwrap();
        let cfg = MiConfig {
            reward_scale: 1.0,
            ..MiConfig::default()
        };
        let detail = transition_reward_detail(
            &net,
            &[0.1, 0.2, 0.3, 0.4],
            &[0.5, 0.6, 0.7, 0.8],
            &split,
            &cfg,
        )
        .unwrap();
        assert!(detail.raw_nats.abs() < 1e-6);
        assert_eq!(detail.clipped, 0.0);
    }

    #[test]
    fn transition_reward_hand_arithmetic_case() {
        let net = absolute_sum_net();
        let split = StateSplit::new(vec![0, 1], vec![2, 3], 4).unwrap();
        let cfg = MiConfig {
            reward_scale: 1.0,
            ..MiConfig::default()
        };
        // agent [1,0] / surrounding [1,0] at t; both negated at t+1.
        let s_t = [1.0, 0.0, 1.0, 0.0];
        let s_t1 = [-1.0, 0.0, -1.0, 0.0];
        let detail = transition_reward_detail(&net, &s_t, &s_t1, &split, &cfg).unwrap();
        assert!((detail.raw_nats - 1.0).abs() < 1e-6);
        assert!((detail.clipped - 1.0).abs() < 1e-6);
    }

    #[test]
    fn transition_reward_clips_negative_raw_to_lower_bound() {
        // Swap the roles so the cross pairs score higher than the joints.
        let net = absolute_sum_net();
        let split = StateSplit::new(vec![0, 1], vec![2, 3], 4).unwrap();
        let cfg = MiConfig {
            reward_scale: 10.0,
            ..MiConfig::default()
        };
        let s_t = [1.0, 0.0, -1.0, 0.0];
        let s_t1 = [-1.0, 0.0, 1.0, 0.0];
        let detail = transition_reward_detail(&net, &s_t, &s_t1, &split, &cfg).unwrap();
        assert!(detail.raw_nats < 0.0);
        assert_eq!(detail.clipped, 0.0);
    }

    #[test]
    fn transition_reward_always_in_clip_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = StatisticsNetwork::init(2, 2, &[8, 8], &mut rng).unwrap();
        let split = StateSplit::new(vec![0, 1], vec![2, 3], 4).unwrap();
        let cfg = MiConfig::default();
        for _ in 0..500 {
            let s_t: Vec<f32> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let s_t1: Vec<f32> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let r = transition_reward(&net, &s_t, &s_t1, &split, &cfg).unwrap();
            assert!(r >= cfg.clip_low as f32 && r <= cfg.clip_high as f32);
        }
    }

    #[test]
    fn transition_reward_rejects_dimension_mismatch() {
        let net = constant_net(0.0, 2, 2);
        let split = StateSplit::new(vec![0, 1], vec![2, 3], 4).unwrap();
        let cfg = MiConfig::default();
        assert!(matches!(
            transition_reward(&net, &[0.0; 3], &[0.0; 4], &split, &cfg),
            Err(Error::Dimension(_))
        ));
        let wide_split = StateSplit::new(vec![0, 1, 2], vec![3, 4], 5).unwrap();
        assert!(matches!(
            transition_reward(&net, &[0.0; 5], &[0.0; 5], &wide_split, &cfg),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn analytic_gaussian_mi_values() {
        assert_eq!(analytic_gaussian_mi(0.0, 3).unwrap(), 0.0);
        let v = analytic_gaussian_mi(0.9, 1).unwrap();
        assert!((v - 0.830366).abs() < 1e-5);
        let v2 = analytic_gaussian_mi(0.5, 2).unwrap();
        assert!((v2 - 2.0 * 0.143841).abs() < 1e-5);
        assert!(matches!(
            analytic_gaussian_mi(1.0, 1),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            analytic_gaussian_mi(0.5, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn training_rejects_single_transition_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = StatisticsNetwork::init(1, 1, &[8], &mut rng).unwrap();
        let mut opt = AdamState::for_net(&net.mlp, 1e-3);
        let traj = TrajectoryRecord::new(
            vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            vec![vec![0.0]],
            vec![0.0],
            vec![0.0],
        )
        .unwrap();
        let split = StateSplit::new(vec![0], vec![1], 2).unwrap();
        assert!(matches!(
            train_estimator_step(&mut net, &traj, &split, &mut opt, &mut rng),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn estimator_stays_near_zero_on_independent_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = StatisticsNetwork::init(1, 1, &[32, 32], &mut rng).unwrap();
        let mut opt = AdamState::for_net(&net.mlp, 1e-3);
        for _ in 0..2000 {
            let x = Array2::from_shape_fn((64, 1), |_| rng.gen_range(-1.0..1.0f32));
            let y = Array2::from_shape_fn((64, 1), |_| rng.gen_range(-1.0..1.0f32));
            train_on_pairs(&mut net, &x, &y, &mut opt, &mut rng).unwrap();
        }
        let mut total = 0.0;
        for _ in 0..4 {
            let x = Array2::from_shape_fn((1024, 1), |_| rng.gen_range(-1.0..1.0f32));
            let y = Array2::from_shape_fn((1024, 1), |_| rng.gen_range(-1.0..1.0f32));
            total += trajectory_bound(&net, &x, &y, &mut rng).unwrap();
        }
        let bound = total / 4.0;
        assert!(bound.abs() <= 0.1, "independence bound drifted to {bound}");
    }

    #[test]
    fn estimator_reaches_gaussian_truth_from_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bound = gaussian_benchmark(0.9, 2000, 128, &[64, 64], 1e-3, &mut rng).unwrap();
        let truth = analytic_gaussian_mi(0.9, 1).unwrap();
        assert!(bound >= 0.6, "bound {bound} below 0.6");
        assert!(bound <= truth + 0.1, "bound {bound} exceeds truth {truth} + slack");
    }
}
