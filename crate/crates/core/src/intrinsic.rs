//! Reward composition for all training variants, plus the two auxiliary
//! intrinsic signals: an action-information (empowerment-style) reward that
//! reuses the pair-fraction bound with actions in the agent slot, and a
//! skill-discriminator reward on surrounding states.

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mi::{pair_fraction_bound, MiConfig, StatisticsNetwork};
use crate::nn::{adam_step, AdamState, Mlp, MlpSpec, OutputActivation};

/// Which signals feed the agent's reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    TaskOnly,
    MusicU,
    MusicR,
    Empowerment,
    Diayn,
    MusicPlusDiayn,
}

/// Combine task, MI, and auxiliary rewards for one transition.
///
/// `mi_r` is expected to be already scaled and clipped; `aux_r` carries the
/// empowerment or discriminator reward in the modes that use one.
pub fn compose_reward(mode: RewardMode, task_r: f32, mi_r: f32, aux_r: f32) -> f32 {
    match mode {
        RewardMode::TaskOnly => task_r,
        RewardMode::MusicU => mi_r,
        RewardMode::MusicR => task_r + mi_r,
        RewardMode::Empowerment => aux_r,
        RewardMode::Diayn => aux_r,
        RewardMode::MusicPlusDiayn => mi_r + aux_r,
    }
}

/// Pair-fraction bound with the agent-state slot replaced by the action:
/// joints `(s^s_t, a_t)` and `(s^s_{t+1}, a_{t+1})`, cross pairs for the
/// marginal term, then the shared scale and clip.
pub fn empowerment_reward(
    net: &StatisticsNetwork,
    action_t: &[f32],
    action_t1: &[f32],
    surr_t: &[f32],
    surr_t1: &[f32],
    cfg: &MiConfig,
) -> Result<f32> {
    let raw = pair_fraction_bound(net, surr_t, action_t, surr_t1, action_t1)?;
    Ok((cfg.reward_scale * raw).clamp(cfg.clip_low, cfg.clip_high) as f32)
}

/// Skill discriminator: surrounding state in, one logit per skill out.
#[derive(Debug, Clone)]
pub struct DiscriminatorParams {
    pub mlp: Mlp,
    pub num_skills: usize,
}

impl DiscriminatorParams {
    pub fn new(mlp: Mlp, num_skills: usize) -> Result<Self> {
        if num_skills < 2 {
            return Err(Error::Usage("need at least two skills".into()));
        }
        if mlp.output_dim() != num_skills {
            return Err(Error::Dimension(format!(
                "discriminator outputs {} logits for {} skills",
                mlp.output_dim(),
                num_skills
            )));
        }
        Ok(Self { mlp, num_skills })
    }

    pub fn init(
        surrounding_dim: usize,
        num_skills: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spec = MlpSpec::with_relu_hidden(
            surrounding_dim,
            hidden,
            num_skills,
            OutputActivation::Linear,
        )?;
        Self::new(Mlp::init(spec, rng), num_skills)
    }
}

fn log_softmax_row(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = max
        + logits
            .iter()
            .map(|&v| ((v as f64) - max).exp())
            .sum::<f64>()
            .ln();
    logits.iter().map(|&v| v as f64 - lse).collect()
}

/// `log q(z | s^s) - log(1/K)`: positive when the discriminator recognizes
/// the skill from the surrounding state, zero under a uniform prediction.
pub fn diayn_reward(
    disc: &DiscriminatorParams,
    surrounding_state: &[f32],
    skill: usize,
) -> Result<f32> {
    if skill >= disc.num_skills {
        return Err(Error::Index(format!(
            "skill {skill} out of range for {} skills",
            disc.num_skills
        )));
    }
    let mut input = Array2::zeros((1, surrounding_state.len()));
    for (c, v) in surrounding_state.iter().enumerate() {
        input[[0, c]] = *v;
    }
    let logits = disc.mlp.forward(&input)?;
    let ls = log_softmax_row(logits.row(0).as_slice().unwrap());
    Ok((ls[skill] + (disc.num_skills as f64).ln()) as f32)
}

/// One Adam step minimizing the cross-entropy of predicting skills from
/// surrounding states. Returns the pre-update loss.
pub fn train_discriminator_step(
    disc: &mut DiscriminatorParams,
    states: &Array2<f32>,
    skills: &[usize],
    optimizer: &mut AdamState,
) -> Result<f32> {
    let n = states.nrows();
    if n == 0 {
        return Err(Error::Usage("discriminator batch is empty".into()));
    }
    if skills.len() != n {
        return Err(Error::Dimension("skill labels differ from batch size".into()));
    }
    if let Some(&bad) = skills.iter().find(|&&z| z >= disc.num_skills) {
        return Err(Error::Index(format!(
            "skill {bad} out of range for {} skills",
            disc.num_skills
        )));
    }
    let (logits, cache) = disc.mlp.forward_cached(states)?;
    let mut loss = 0.0f64;
    let mut upstream = Array2::zeros((n, disc.num_skills));
    let inv_n = 1.0 / n as f32;
    for i in 0..n {
        let row: Vec<f32> = logits.index_axis(Axis(0), i).to_vec();
        let ls = log_softmax_row(&row);
        loss -= ls[skills[i]];
        for k in 0..disc.num_skills {
            let softmax = ls[k].exp() as f32;
            let onehot = if k == skills[i] { 1.0 } else { 0.0 };
            upstream[[i, k]] = (softmax - onehot) * inv_n;
        }
    }
    loss /= n as f64;
    let grads = disc.mlp.backward(&cache, &upstream)?;
    adam_step(&mut disc.mlp, &grads, optimizer)?;
    Ok(loss as f32)
}
