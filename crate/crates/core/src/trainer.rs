//! Training orchestration: rollout collection, reward composition per
//! variant, estimator and discriminator updates, evaluation, checkpointing,
//! the MI report, and the estimator validation suite.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agent::{self, AgentOptimizers, AgentParams, TransitionBatch};
use crate::checkpoint::{file_digest, Checkpoint};
use crate::config::RunConfig;
use crate::env::{
    self, EnvKind, EnvParams, StateSplit, ACTION_DIM, GOAL_DIM, OBSERVATION_DIM,
};
use crate::error::{Error, Result};
use crate::intrinsic::{
    compose_reward, diayn_reward, empowerment_reward, train_discriminator_step,
    DiscriminatorParams, RewardMode,
};
use crate::metrics::{emit_metrics, EpisodeLog, EpisodeRecord, MetricsRow};
use crate::mi::{
    self, split_trajectory, train_estimator_step, train_on_pairs, trajectory_bound,
    transition_reward_detail, MiConfig, StatisticsNetwork,
};
use crate::nn::{AdamState, MlpSpec, OutputActivation, ParamTensor};
use crate::replay::{ReplayBuffer, TrajectoryRecord, TransitionSample};

const STREAM_EPISODE: u64 = 0x45505349;
const STREAM_EVAL: u64 = 0x4556414c;
const STREAM_INIT: u64 = 0x494e4954;
const STREAM_SAMPLE: u64 = 0x53414d50;
const STREAM_SHUFFLE: u64 = 0x53485546;
const STREAM_BASELINE: u64 = 0x42415345;
const STREAM_HELDOUT: u64 = 0x48454c44;
const HELDOUT_EVAL_SEED: u64 = 0x48455641;

fn derive_rng(seed: u64, stream: u64, counter: u64) -> ChaCha8Rng {
    let mixed = seed
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(counter.wrapping_mul(0xD1B54A32D192ED03));
    ChaCha8Rng::seed_from_u64(mixed)
}

// ---------------------------------------------------------------------------
// Checkpoint bundles

/// Policy checkpoint contents: the four networks plus the conditioning
/// metadata needed to drive the policy again.
pub struct PolicyBundle {
    pub agent: AgentParams,
    pub goal_conditioned: bool,
    pub num_skills: usize,
}

pub fn save_policy(bundle: &PolicyBundle, path: impl AsRef<Path>) -> Result<()> {
    let mut ckpt = Checkpoint::new();
    ckpt.insert(
        "meta",
        ParamTensor::new(
            vec![4],
            vec![
                1.0,
                if bundle.goal_conditioned { 1.0 } else { 0.0 },
                bundle.num_skills as f32,
                bundle.agent.gamma,
            ],
        )?,
    )?;
    ckpt.insert_mlp("actor", &bundle.agent.actor)?;
    ckpt.insert_mlp("critic", &bundle.agent.critic)?;
    ckpt.insert_mlp("actor_target", &bundle.agent.actor_target)?;
    ckpt.insert_mlp("critic_target", &bundle.agent.critic_target)?;
    ckpt.save(path)
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyBundle> {
    let ckpt = Checkpoint::load(path.as_ref())?;
    let meta = ckpt
        .get("meta")
        .ok_or_else(|| Error::Compatibility("policy checkpoint lacks meta entry".into()))?;
    if meta.values.len() != 4 || meta.values[0] != 1.0 {
        return Err(Error::Compatibility("unrecognized policy meta layout".into()));
    }
    let goal_conditioned = meta.values[1] != 0.0;
    let num_skills = meta.values[2] as usize;
    let gamma = meta.values[3];
    let actor_sizes = ckpt.mlp_layer_sizes("actor")?;
    let critic_sizes = ckpt.mlp_layer_sizes("critic")?;
    let actor_spec = MlpSpec::new(
        actor_sizes,
        crate::nn::Activation::Relu,
        OutputActivation::Tanh,
    )?;
    let critic_spec = MlpSpec::new(
        critic_sizes,
        crate::nn::Activation::Relu,
        OutputActivation::Linear,
    )?;
    let agent = AgentParams {
        actor: ckpt.read_mlp("actor", actor_spec.clone())?,
        critic: ckpt.read_mlp("critic", critic_spec.clone())?,
        actor_target: ckpt.read_mlp("actor_target", actor_spec)?,
        critic_target: ckpt.read_mlp("critic_target", critic_spec)?,
        gamma,
    };
    Ok(PolicyBundle {
        agent,
        goal_conditioned,
        num_skills,
    })
}

pub fn save_estimator(net: &StatisticsNetwork, path: impl AsRef<Path>) -> Result<()> {
    let mut ckpt = Checkpoint::new();
    ckpt.insert(
        "meta",
        ParamTensor::new(vec![2], vec![1.0, net.input_dim() as f32])?,
    )?;
    ckpt.insert_mlp("net", &net.mlp)?;
    ckpt.insert("ema", ParamTensor::scalar(net.ema_denominator as f32))?;
    ckpt.insert("ema_decay", ParamTensor::scalar(net.ema_decay as f32))?;
    ckpt.save(path)
}

pub fn load_estimator(path: impl AsRef<Path>) -> Result<StatisticsNetwork> {
    let ckpt = Checkpoint::load(path.as_ref())?;
    let sizes = ckpt.mlp_layer_sizes("net")?;
    let spec = MlpSpec::new(sizes, crate::nn::Activation::Relu, OutputActivation::Linear)?;
    let mlp = ckpt.read_mlp("net", spec)?;
    let mut net = StatisticsNetwork::new(mlp)?;
    if let Some(ema) = ckpt.get("ema") {
        net.ema_denominator = ema.values[0] as f64;
    }
    if let Some(decay) = ckpt.get("ema_decay") {
        net.ema_decay = decay.values[0] as f64;
    }
    Ok(net)
}

// ---------------------------------------------------------------------------
// Trajectory persistence (JSON lines)

pub fn write_trajectories(records: &[TrajectoryRecord], path: impl AsRef<Path>) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Read trajectories from a `.jsonl` file, or from every `.jsonl` file in a
/// directory (sorted by name).
pub fn read_trajectories(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRecord>> {
    let path = path.as_ref();
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "jsonl") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    let mut out = Vec::new();
    for file in files {
        let text = std::fs::read_to_string(&file)?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let record: TrajectoryRecord = serde_json::from_str(line)?;
            record.validate()?;
            out.push(record);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Rollouts

#[derive(Debug, Clone, Copy)]
struct EpisodeStats {
    success: bool,
    task_return: f64,
    object_displacement: f64,
    steps: usize,
}

fn onehot(skill: usize, num_skills: usize) -> Vec<f32> {
    let mut v = vec![0.0; num_skills];
    v[skill] = 1.0;
    v
}

fn conditioning(
    goal: &[f32],
    goal_conditioned: bool,
    skill: Option<usize>,
    num_skills: usize,
) -> Vec<f32> {
    let mut cond = if goal_conditioned {
        goal.to_vec()
    } else {
        vec![0.0; GOAL_DIM]
    };
    if let Some(z) = skill {
        cond.extend(onehot(z, num_skills));
    }
    cond
}

/// Run one fixed-length episode. Episodes always run `episode_length` steps;
/// the per-transition done/success flags live in the stored rewards (reward 1
/// marks success), which keeps the schedule accounting exact.
#[allow(clippy::too_many_arguments)]
fn collect_episode(
    env_params: &EnvParams,
    agent_params: &AgentParams,
    goal_conditioned: bool,
    skill: Option<usize>,
    num_skills: usize,
    explore: bool,
    exploration: &crate::agent::ExplorationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TrajectoryRecord, EpisodeStats)> {
    let (mut state, obs0) = env::reset(env_params, rng);
    let cond = conditioning(&state.goal, goal_conditioned, skill, num_skills);
    let mut observations = vec![obs0];
    let mut actions = Vec::with_capacity(env_params.episode_length);
    let mut rewards = Vec::with_capacity(env_params.episode_length);
    let mut stats = EpisodeStats {
        success: false,
        task_return: 0.0,
        object_displacement: 0.0,
        steps: env_params.episode_length,
    };
    for _ in 0..env_params.episode_length {
        let obs = observations.last().unwrap().clone();
        let action = agent::act(agent_params, &obs, &cond, explore, exploration, rng)?;
        let (next, result) = env::step(env_params, &state, [action[0], action[1]]);
        stats.success |= result.success;
        stats.task_return += result.task_reward as f64;
        stats.object_displacement += ((next.object_pos[0] - state.object_pos[0]).powi(2)
            + (next.object_pos[1] - state.object_pos[1]).powi(2))
        .sqrt() as f64;
        observations.push(result.observation);
        actions.push(action);
        rewards.push(result.task_reward);
        state = next;
    }
    let goal = vec![state.goal[0], state.goal[1]];
    let mut record = TrajectoryRecord::new(observations, actions, goal, rewards)?;
    if let Some(z) = skill {
        record = record.with_skill(z);
    }
    Ok((record, stats))
}

// ---------------------------------------------------------------------------
// Batch assembly

struct IntrinsicNets<'a> {
    music: Option<&'a StatisticsNetwork>,
    empowerment: Option<&'a StatisticsNetwork>,
    discriminator: Option<&'a DiscriminatorParams>,
}

struct RewardStats {
    pre_clip_sum: f64,
    post_clip_sum: f64,
    count: usize,
    /// Mean clipped MI reward per trajectory id seen in the batch.
    per_trajectory: BTreeMap<u64, (f64, usize)>,
}

impl RewardStats {
    fn new() -> Self {
        Self {
            pre_clip_sum: 0.0,
            post_clip_sum: 0.0,
            count: 0,
            per_trajectory: BTreeMap::new(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn compose_batch(
    samples: &[TransitionSample],
    weights: Option<Vec<f32>>,
    mode: RewardMode,
    nets: &IntrinsicNets,
    buffer: &ReplayBuffer,
    split: &StateSplit,
    mi_cfg: &MiConfig,
    goal_conditioned: bool,
    num_skills: usize,
    episode_length: usize,
    stats: &mut RewardStats,
) -> Result<TransitionBatch> {
    let n = samples.len();
    let obs_dim = OBSERVATION_DIM;
    let cond_dim = GOAL_DIM + if nets.discriminator.is_some() { num_skills } else { 0 };
    let mut obs = Array2::zeros((n, obs_dim));
    let mut goals = Array2::zeros((n, cond_dim));
    let mut actions = Array2::zeros((n, ACTION_DIM));
    let mut next_obs = Array2::zeros((n, obs_dim));
    let mut rewards = Array1::zeros(n);
    let mut dones = Vec::with_capacity(n);

    for (i, s) in samples.iter().enumerate() {
        for (c, v) in s.observation.iter().enumerate() {
            obs[[i, c]] = *v;
        }
        for (c, v) in s.next_observation.iter().enumerate() {
            next_obs[[i, c]] = *v;
        }
        for (c, v) in s.action.iter().enumerate() {
            actions[[i, c]] = *v;
        }
        let cond = conditioning(&s.goal, goal_conditioned, s.skill, num_skills);
        for (c, v) in cond.iter().enumerate() {
            goals[[i, c]] = *v;
        }

        let (mi_pre, mi_post) = match nets.music {
            Some(net) => {
                let d =
                    transition_reward_detail(net, &s.observation, &s.next_observation, split, mi_cfg)?;
                (d.scaled, d.clipped)
            }
            None => (0.0, 0.0),
        };
        let aux = match (nets.empowerment, nets.discriminator) {
            (Some(net), _) => {
                let (_, surr_t) = env::split_observation(&s.observation, split)?;
                let (_, surr_t1) = env::split_observation(&s.next_observation, split)?;
                let next_action = buffer
                    .get(s.trajectory_id)
                    .and_then(|t| t.actions.get(s.step_index + 1))
                    .cloned()
                    .unwrap_or_else(|| s.action.clone());
                empowerment_reward(net, &s.action, &next_action, &surr_t, &surr_t1, mi_cfg)?
            }
            (_, Some(disc)) => {
                let (_, surr_t1) = env::split_observation(&s.next_observation, split)?;
                diayn_reward(disc, &surr_t1, s.skill.unwrap_or(0))?
            }
            _ => 0.0,
        };

        rewards[i] = compose_reward(mode, s.task_reward, mi_post, aux);
        dones.push(s.task_reward > 0.5 || s.step_index + 1 >= episode_length);

        stats.pre_clip_sum += compose_reward(mode, 0.0, mi_pre as f32, aux) as f64;
        stats.post_clip_sum += compose_reward(mode, 0.0, mi_post, aux) as f64;
        stats.count += 1;
        if nets.music.is_some() {
            let e = stats.per_trajectory.entry(s.trajectory_id).or_insert((0.0, 0));
            e.0 += mi_post as f64;
            e.1 += 1;
        }
    }

    Ok(TransitionBatch {
        obs,
        goals,
        actions,
        rewards,
        next_obs,
        dones,
        weights: weights.map(Array1::from_vec),
    })
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalEpisode {
    pub success: bool,
    pub task_return: f64,
    pub object_displacement: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub success_rate: f64,
    pub mean_task_return: f64,
    pub mean_object_displacement: f64,
    pub episodes: Vec<EvalEpisode>,
}

fn run_eval_rollouts(
    env_params: &EnvParams,
    bundle: &PolicyBundle,
    n_rollouts: usize,
    seed: u64,
    epoch_tag: u64,
) -> Result<(EvalReport, Vec<TrajectoryRecord>)> {
    if n_rollouts == 0 {
        return Err(Error::Usage("evaluation needs at least one rollout".into()));
    }
    let expected_cond = GOAL_DIM + if bundle.num_skills > 0 { bundle.num_skills } else { 0 };
    if bundle.agent.obs_cond_dim() != OBSERVATION_DIM + expected_cond {
        return Err(Error::Compatibility(format!(
            "policy expects input width {}, environment provides {}",
            bundle.agent.obs_cond_dim(),
            OBSERVATION_DIM + expected_cond
        )));
    }
    let exploration = crate::agent::ExplorationConfig::default();
    let mut episodes = Vec::with_capacity(n_rollouts);
    let mut trajectories = Vec::with_capacity(n_rollouts);
    for i in 0..n_rollouts {
        let mut rng = derive_rng(seed, STREAM_EVAL, epoch_tag.wrapping_mul(100_000) + i as u64);
        let skill = if bundle.num_skills > 0 { Some(0) } else { None };
        let (record, stats) = collect_episode(
            env_params,
            &bundle.agent,
            bundle.goal_conditioned,
            skill,
            bundle.num_skills,
            false,
            &exploration,
            &mut rng,
        )?;
        episodes.push(EvalEpisode {
            success: stats.success,
            task_return: stats.task_return,
            object_displacement: stats.object_displacement,
        });
        trajectories.push(record);
    }
    let n = episodes.len() as f64;
    let report = EvalReport {
        success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
        mean_task_return: episodes.iter().map(|e| e.task_return).sum::<f64>() / n,
        mean_object_displacement: episodes.iter().map(|e| e.object_displacement).sum::<f64>() / n,
        episodes,
    };
    Ok((report, trajectories))
}

/// Deterministic evaluation of a saved policy checkpoint.
pub fn evaluate(
    policy_checkpoint: impl AsRef<Path>,
    env_name: &str,
    n_rollouts: usize,
    seed: u64,
) -> Result<EvalReport> {
    let bundle = load_policy(policy_checkpoint)?;
    let kind = EnvKind::from_name(env_name)?;
    let env_params = EnvParams::new(kind, 50);
    let (report, _) = run_eval_rollouts(&env_params, &bundle, n_rollouts, seed, 0)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Run manifest

#[derive(Debug, Clone, Serialize)]
pub struct LineageEntry {
    pub path: String,
    pub digest: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub random_baseline: f64,
    pub env_steps_total: usize,
    pub env_steps_expected: usize,
    pub wall_clock_seconds: f64,
    pub checkpoint_digests: BTreeMap<String, String>,
    pub policy_init: Option<LineageEntry>,
    pub estimator_init: Option<LineageEntry>,
}

/// Filesystem layout of a finished run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub metrics: Vec<MetricsRow>,
    pub metrics_path: PathBuf,
    pub episode_log_path: PathBuf,
    pub manifest_path: PathBuf,
    pub policy_checkpoint: PathBuf,
    pub estimator_prior_checkpoint: Option<PathBuf>,
    pub estimator_final_checkpoint: Option<PathBuf>,
    pub estimator_epoch_checkpoints: Vec<PathBuf>,
    pub heldout_trajectories_path: PathBuf,
    pub eval_trajectories_path: PathBuf,
    pub random_baseline: f64,
    pub env_steps: usize,
}

// ---------------------------------------------------------------------------
// Training

struct HeldoutSet {
    records: Vec<TrajectoryRecord>,
    state_pairs: Vec<(Array2<f32>, Array2<f32>)>,
    action_pairs: Vec<(Array2<f32>, Array2<f32>)>,
}

fn build_heldout(
    env_params: &EnvParams,
    split: &StateSplit,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<HeldoutSet> {
    let mut records = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (mut state, obs0) = env::reset(env_params, rng);
        let mut observations = vec![obs0];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        for _ in 0..env_params.episode_length {
            let action = vec![rng.gen_range(-1.0..=1.0f32), rng.gen_range(-1.0..=1.0f32)];
            let (next, result) = env::step(env_params, &state, [action[0], action[1]]);
            observations.push(result.observation);
            actions.push(action);
            rewards.push(result.task_reward);
            state = next;
        }
        records.push(TrajectoryRecord::new(
            observations,
            actions,
            vec![state.goal[0], state.goal[1]],
            rewards,
        )?);
    }
    let mut state_pairs = Vec::with_capacity(records.len());
    let mut action_pairs = Vec::with_capacity(records.len());
    for r in &records {
        state_pairs.push(split_trajectory(&r.observations, split)?);
        let (surr_all, _) = split_trajectory(&r.observations, split)?;
        let l = r.actions.len();
        let mut surr_next = Array2::zeros((l, surr_all.ncols()));
        for t in 0..l {
            surr_next.row_mut(t).assign(&surr_all.row(t + 1));
        }
        let mut acts = Array2::zeros((l, r.actions[0].len()));
        for (t, a) in r.actions.iter().enumerate() {
            for (c, v) in a.iter().enumerate() {
                acts[[t, c]] = *v;
            }
        }
        action_pairs.push((surr_next, acts));
    }
    Ok(HeldoutSet {
        records,
        state_pairs,
        action_pairs,
    })
}

fn heldout_bound(
    net: &StatisticsNetwork,
    pairs: &[(Array2<f32>, Array2<f32>)],
    seed: u64,
) -> Result<f64> {
    let mut rng = derive_rng(seed, HELDOUT_EVAL_SEED, 0);
    let mut total = 0.0;
    for (surr, slot) in pairs {
        total += trajectory_bound(net, surr, slot, &mut rng)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Execute one full training run and write all artifacts under
/// `config.out_dir`.
pub fn run_training(config: &RunConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let start = Instant::now();
    let out = &config.out_dir;
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;

    let kind = EnvKind::from_name(&config.env_name)?;
    let env_params = EnvParams::new(kind, config.episode_length);
    let split = StateSplit::default_position_split();
    let mi_cfg = config.mi_config();
    let sampler_cfg = config.sampler_config();
    let exploration = config.exploration_config();
    let variant = config.variant;
    let mode = variant.reward_mode();
    let goal_conditioned = variant.goal_conditioned();
    let skill_conditioned = variant.skill_conditioned();
    let num_skills = if skill_conditioned { config.num_skills } else { 0 };

    let mut rng_init = derive_rng(config.seed, STREAM_INIT, 0);
    let mut rng_sample = derive_rng(config.seed, STREAM_SAMPLE, 0);
    let mut rng_shuffle = derive_rng(config.seed, STREAM_SHUFFLE, 0);

    let mut rng_baseline = derive_rng(config.seed, STREAM_BASELINE, 0);
    let random_baseline = env::random_policy_baseline(&env_params, 100, &mut rng_baseline);

    let mut rng_heldout = derive_rng(config.seed, STREAM_HELDOUT, 0);
    let heldout = build_heldout(&env_params, &split, config.heldout_episodes, &mut rng_heldout)?;
    let heldout_path = out.join("heldout_trajectories.jsonl");
    write_trajectories(&heldout.records, &heldout_path)?;

    // Agent, optionally initialized from a pretrained policy.
    let cond_dim = GOAL_DIM + num_skills;
    let mut agent_params = AgentParams::new(
        OBSERVATION_DIM,
        cond_dim,
        ACTION_DIM,
        &config.agent_hidden(),
        config.gamma,
        &mut rng_init,
    )?;
    let mut policy_init = None;
    if let Some(path) = &config.policy_checkpoint {
        let bundle = load_policy(path)?;
        if bundle.agent.obs_cond_dim() != agent_params.obs_cond_dim()
            || bundle.agent.action_dim() != agent_params.action_dim()
        {
            return Err(Error::Compatibility(format!(
                "pretrained policy input width {} does not match run ({})",
                bundle.agent.obs_cond_dim(),
                agent_params.obs_cond_dim()
            )));
        }
        agent_params = AgentParams {
            gamma: config.gamma,
            ..bundle.agent
        };
        policy_init = Some(LineageEntry {
            path: path.display().to_string(),
            digest: file_digest(path)?,
        });
    }
    let mut optimizers = AgentOptimizers::new(&agent_params, config.actor_lr, config.critic_lr);

    // Statistics networks and discriminator per variant.
    let surr_dim = split.surrounding_indices().len();
    let agent_dim = split.agent_indices().len();
    let mut estimator_init = None;
    let mut music_net = if variant.uses_music_estimator() {
        let net = if let Some(path) = &config.estimator_checkpoint {
            let net = load_estimator(path)?;
            if net.input_dim() != surr_dim + agent_dim {
                return Err(Error::Compatibility(format!(
                    "transferred estimator expects input {}, split provides {}",
                    net.input_dim(),
                    surr_dim + agent_dim
                )));
            }
            estimator_init = Some(LineageEntry {
                path: path.display().to_string(),
                digest: file_digest(path)?,
            });
            net
        } else {
            let mut net = StatisticsNetwork::init(
                surr_dim,
                agent_dim,
                &config.estimator_hidden(),
                &mut rng_init,
            )?;
            net.ema_decay = config.ema_decay;
            net
        };
        Some(net)
    } else {
        None
    };
    let mut music_opt = music_net
        .as_ref()
        .map(|n| AdamState::for_net(&n.mlp, config.estimator_lr));

    let mut emp_net = if variant.uses_empowerment() {
        let mut net = StatisticsNetwork::init(
            surr_dim,
            ACTION_DIM,
            &config.estimator_hidden(),
            &mut rng_init,
        )?;
        net.ema_decay = config.ema_decay;
        Some(net)
    } else {
        None
    };
    let mut emp_opt = emp_net
        .as_ref()
        .map(|n| AdamState::for_net(&n.mlp, config.estimator_lr));

    let mut discriminator = if variant.uses_discriminator() {
        Some(DiscriminatorParams::init(
            surr_dim,
            config.num_skills,
            &config.estimator_hidden(),
            &mut rng_init,
        )?)
    } else {
        None
    };
    let mut disc_opt = discriminator
        .as_ref()
        .map(|d| AdamState::for_net(&d.mlp, config.estimator_lr));

    let mut estimator_prior_checkpoint = None;
    if let Some(net) = &music_net {
        let path = ckpt_dir.join("estimator_prior.ckpt");
        save_estimator(net, &path)?;
        estimator_prior_checkpoint = Some(path);
    }

    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut episode_log = EpisodeLog::create(out.join("episodes.jsonl"))?;
    let metrics_path = out.join("metrics.csv");
    let mut metrics: Vec<MetricsRow> = Vec::new();
    emit_metrics(&metrics, &metrics_path)?;

    let mut estimator_epoch_checkpoints = Vec::new();
    let mut final_eval_trajectories: Vec<TrajectoryRecord> = Vec::new();
    let mut env_steps = 0usize;
    let mut episode_counter = 0u64;

    for epoch in 1..=config.epochs {
        let mut stats = RewardStats::new();
        for cycle in 1..=config.cycles_per_epoch {
            // Collect rollouts; each episode owns a derived RNG so parallel
            // collection reproduces the sequential stream exactly.
            let episode_seeds: Vec<u64> = (0..config.rollouts_per_cycle)
                .map(|i| episode_counter + i as u64)
                .collect();
            episode_counter += config.rollouts_per_cycle as u64;
            let collect_one = |tag: u64| -> Result<(TrajectoryRecord, EpisodeStats)> {
                let mut rng = derive_rng(config.seed, STREAM_EPISODE, tag);
                let skill = if skill_conditioned {
                    Some(rng.gen_range(0..config.num_skills))
                } else {
                    None
                };
                collect_episode(
                    &env_params,
                    &agent_params,
                    goal_conditioned,
                    skill,
                    num_skills,
                    true,
                    &exploration,
                    &mut rng,
                )
            };
            let collected: Vec<(TrajectoryRecord, EpisodeStats)> = if config.parallel_rollouts {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = episode_seeds
                        .iter()
                        .map(|&tag| scope.spawn(move || collect_one(tag)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("rollout thread panicked"))
                        .collect::<Result<Vec<_>>>()
                })?
            } else {
                episode_seeds
                    .iter()
                    .map(|&tag| collect_one(tag))
                    .collect::<Result<Vec<_>>>()?
            };
            for (i, (mut record, ep_stats)) in collected.into_iter().enumerate() {
                env_steps += ep_stats.steps;
                if variant.prioritized() {
                    record.priority = buffer.max_priority().max(1.0);
                }
                let skill = record.skill;
                buffer.store(record)?;
                episode_log.append(&EpisodeRecord {
                    phase: "train".into(),
                    epoch,
                    cycle,
                    episode: i,
                    skill,
                    success: ep_stats.success,
                    task_return: ep_stats.task_return,
                    object_displacement: ep_stats.object_displacement,
                    steps: ep_stats.steps,
                })?;
            }

            for batch_index in 0..config.batches_per_cycle {
                let (samples, weights) = if variant.prioritized() {
                    let (s, w) = buffer.sample_prioritized(
                        config.batch_size,
                        &sampler_cfg,
                        &mut rng_sample,
                    )?;
                    (s, Some(w))
                } else {
                    (buffer.sample_uniform(config.batch_size, &mut rng_sample)?, None)
                };
                let nets = IntrinsicNets {
                    music: music_net.as_ref(),
                    empowerment: emp_net.as_ref(),
                    discriminator: discriminator.as_ref(),
                };
                let batch = compose_batch(
                    &samples,
                    weights,
                    mode,
                    &nets,
                    &buffer,
                    &split,
                    &mi_cfg,
                    goal_conditioned,
                    num_skills,
                    config.episode_length,
                    &mut stats,
                )?;
                if variant.prioritized() {
                    let (ids, values): (Vec<u64>, Vec<f32>) = stats
                        .per_trajectory
                        .iter()
                        .map(|(&id, &(sum, n))| (id, (sum / n as f64) as f32))
                        .unzip();
                    buffer.update_priorities(&ids, &values)?;
                    stats.per_trajectory.clear();
                }
                agent::update(
                    &mut agent_params,
                    &batch,
                    &mut optimizers,
                    config.polyak_coefficient,
                    config.action_l2,
                )
                .map_err(|e| {
                    Error::Numeric(format!(
                        "epoch {epoch} cycle {cycle} batch {batch_index}: {e}"
                    ))
                })?;

                if variant.trains_estimator() {
                    let trajectory = buffer.sample_trajectory_uniform(&mut rng_sample)?.clone();
                    train_estimator_step(
                        music_net.as_mut().unwrap(),
                        &trajectory,
                        &split,
                        music_opt.as_mut().unwrap(),
                        &mut rng_shuffle,
                    )?;
                }
                if let (Some(net), Some(opt)) = (emp_net.as_mut(), emp_opt.as_mut()) {
                    let trajectory = buffer.sample_trajectory_uniform(&mut rng_sample)?.clone();
                    let (surr_all, _) = split_trajectory(&trajectory.observations, &split)?;
                    let l = trajectory.actions.len();
                    let mut surr_next = Array2::zeros((l, surr_all.ncols()));
                    for t in 0..l {
                        surr_next.row_mut(t).assign(&surr_all.row(t + 1));
                    }
                    let mut acts = Array2::zeros((l, ACTION_DIM));
                    for (t, a) in trajectory.actions.iter().enumerate() {
                        for (c, v) in a.iter().enumerate() {
                            acts[[t, c]] = *v;
                        }
                    }
                    train_on_pairs(net, &surr_next, &acts, opt, &mut rng_shuffle)?;
                }
                if let (Some(disc), Some(opt)) = (discriminator.as_mut(), disc_opt.as_mut()) {
                    let mut states = Array2::zeros((samples.len(), surr_dim));
                    let mut skills = Vec::with_capacity(samples.len());
                    for (i, s) in samples.iter().enumerate() {
                        let (_, surr) = env::split_observation(&s.next_observation, &split)?;
                        for (c, v) in surr.iter().enumerate() {
                            states[[i, c]] = *v;
                        }
                        skills.push(s.skill.unwrap_or(0));
                    }
                    train_discriminator_step(disc, &states, &skills, opt)?;
                }
            }
        }

        if config.refresh_all_priorities && variant.prioritized() {
            if let Some(net) = &music_net {
                let mut ids = Vec::new();
                let mut values = Vec::new();
                for traj in buffer.iter() {
                    let mut sum = 0.0f64;
                    for t in 0..traj.len() {
                        let d = transition_reward_detail(
                            net,
                            &traj.observations[t],
                            &traj.observations[t + 1],
                            &split,
                            &mi_cfg,
                        )?;
                        sum += d.clipped as f64;
                    }
                    ids.push(traj.id);
                    values.push((sum / traj.len() as f64) as f32);
                }
                buffer.update_priorities(&ids, &values)?;
            }
        }

        // Evaluation and metrics.
        let bundle = PolicyBundle {
            agent: agent_params.clone(),
            goal_conditioned,
            num_skills,
        };
        let (report, eval_trajs) = run_eval_rollouts(
            &env_params,
            &bundle,
            config.test_rollouts_per_epoch,
            config.seed,
            epoch as u64,
        )?;
        for (i, e) in report.episodes.iter().enumerate() {
            episode_log.append(&EpisodeRecord {
                phase: "eval".into(),
                epoch,
                cycle: 0,
                episode: i,
                skill: if skill_conditioned { Some(0) } else { None },
                success: e.success,
                task_return: e.task_return,
                object_displacement: e.object_displacement,
                steps: config.episode_length,
            })?;
        }
        final_eval_trajectories = eval_trajs;

        let bound = if let Some(net) = &music_net {
            heldout_bound(net, &heldout.state_pairs, config.seed)?
        } else if let Some(net) = &emp_net {
            heldout_bound(net, &heldout.action_pairs, config.seed)?
        } else {
            f64::NAN
        };
        if !report.success_rate.is_finite() || !report.mean_task_return.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite evaluation metrics at epoch {epoch}"
            )));
        }
        let denom = stats.count.max(1) as f64;
        metrics.push(MetricsRow {
            epoch,
            success_rate: report.success_rate,
            mean_task_return: report.mean_task_return,
            mean_intrinsic_pre_clip: stats.pre_clip_sum / denom,
            mean_intrinsic_post_clip: stats.post_clip_sum / denom,
            heldout_bound: bound,
            mean_object_displacement: report.mean_object_displacement,
        });
        emit_metrics(&metrics, &metrics_path)?;

        if variant.trains_estimator() {
            let path = ckpt_dir.join(format!("estimator_e{epoch:03}.ckpt"));
            save_estimator(music_net.as_ref().unwrap(), &path)?;
            estimator_epoch_checkpoints.push(path);
        }
        log::info!(
            "epoch {epoch}: success {:.2} return {:.2} displacement {:.3} bound {:.4}",
            metrics.last().unwrap().success_rate,
            metrics.last().unwrap().mean_task_return,
            metrics.last().unwrap().mean_object_displacement,
            metrics.last().unwrap().heldout_bound,
        );
    }

    // Final artifacts.
    let policy_path = ckpt_dir.join("policy_final.ckpt");
    save_policy(
        &PolicyBundle {
            agent: agent_params,
            goal_conditioned,
            num_skills,
        },
        &policy_path,
    )?;
    let mut estimator_final_checkpoint = None;
    if let Some(net) = &music_net {
        let path = ckpt_dir.join("estimator_final.ckpt");
        save_estimator(net, &path)?;
        estimator_final_checkpoint = Some(path);
    }
    if let Some(net) = &emp_net {
        save_estimator(net, ckpt_dir.join("empowerment_final.ckpt"))?;
    }
    let eval_path = out.join("final_eval_trajectories.jsonl");
    write_trajectories(&final_eval_trajectories, &eval_path)?;
    episode_log.flush()?;

    let mut digests = BTreeMap::new();
    for path in [&policy_path]
        .into_iter()
        .chain(estimator_prior_checkpoint.iter())
        .chain(estimator_final_checkpoint.iter())
        .chain(estimator_epoch_checkpoints.iter())
    {
        digests.insert(
            path.file_name().unwrap().to_string_lossy().into_owned(),
            file_digest(path)?,
        );
    }
    let manifest = RunManifest {
        config: config.clone(),
        random_baseline,
        env_steps_total: env_steps,
        env_steps_expected: config.epochs
            * config.cycles_per_epoch
            * config.rollouts_per_cycle
            * config.episode_length,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        checkpoint_digests: digests,
        policy_init,
        estimator_init,
    };
    let manifest_path = out.join("run_manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    Ok(RunArtifacts {
        out_dir: out.clone(),
        metrics,
        metrics_path,
        episode_log_path: out.join("episodes.jsonl"),
        manifest_path,
        policy_checkpoint: policy_path,
        estimator_prior_checkpoint,
        estimator_final_checkpoint,
        estimator_epoch_checkpoints,
        heldout_trajectories_path: heldout_path,
        eval_trajectories_path: eval_path,
        random_baseline,
        env_steps,
    })
}

// ---------------------------------------------------------------------------
// MI report

/// Named observation components available for MI report pairs.
pub fn component_indices(name: &str) -> Result<Vec<usize>> {
    Ok(match name {
        "agent_pos" => vec![0, 1],
        "object_pos" => vec![2, 3],
        "object_vel" => vec![4, 5],
        other => {
            return Err(Error::Config(format!(
                "unknown observation component '{other}' (expected agent_pos, object_pos, or object_vel)"
            )))
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MiReportRow {
    /// `agent_component:surrounding_component`.
    pub pair: String,
    pub prior_mean: f64,
    pub prior_std: f64,
    pub post_mean: f64,
    pub post_std: f64,
}

fn bound_stats(
    net: &StatisticsNetwork,
    trajectories: &[TrajectoryRecord],
    agent_idx: &[usize],
    surr_idx: &[usize],
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = derive_rng(seed, HELDOUT_EVAL_SEED, 1);
    let mut values = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        let split = StateSplit::new(
            agent_idx.to_vec(),
            surr_idx.to_vec(),
            t.observations[0].len(),
        )?;
        let (surr, agent) = split_trajectory(&t.observations, &split)?;
        values.push(trajectory_bound(net, &surr, &agent, &mut rng)?);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Trajectory-level bound (mean plus/minus std over eval trajectories) for
/// each component pair under the prior and post estimator checkpoints.
pub fn mi_report(
    prior_checkpoint: impl AsRef<Path>,
    post_checkpoint: impl AsRef<Path>,
    data: impl AsRef<Path>,
    pairs: &[String],
) -> Result<Vec<MiReportRow>> {
    let prior = load_estimator(prior_checkpoint)?;
    let post = load_estimator(post_checkpoint)?;
    let trajectories = read_trajectories(data)?;
    if trajectories.is_empty() {
        return Err(Error::Usage("MI report needs at least one trajectory".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Usage("MI report needs at least one component pair".into()));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let (agent_name, surr_name) = pair.split_once(':').ok_or_else(|| {
            Error::Config(format!(
                "bad pair '{pair}' (expected agent_component:surrounding_component)"
            ))
        })?;
        let agent_idx = component_indices(agent_name.trim())?;
        let surr_idx = component_indices(surr_name.trim())?;
        let width = agent_idx.len() + surr_idx.len();
        for (name, net) in [("prior", &prior), ("post", &post)] {
            if net.input_dim() != width {
                return Err(Error::Compatibility(format!(
                    "{name} estimator expects input {}, pair '{pair}' provides {width}",
                    net.input_dim()
                )));
            }
        }
        let (prior_mean, prior_std) =
            bound_stats(&prior, &trajectories, &agent_idx, &surr_idx, 0)?;
        let (post_mean, post_std) = bound_stats(&post, &trajectories, &agent_idx, &surr_idx, 0)?;
        rows.push(MiReportRow {
            pair: pair.clone(),
            prior_mean,
            prior_std,
            post_mean,
            post_std,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Estimator validation suite

#[derive(Debug, Clone)]
pub struct ValidationConfig {
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub batch: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f32,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            steps: 2000,
            batch: 128,
            hidden: vec![64, 64],
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationCase {
    pub rho: f64,
    pub seed: u64,
    pub bound: f64,
    pub truth: f64,
    pub interval_low: f64,
    pub interval_high: f64,
    pub pass: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub cases: Vec<ValidationCase>,
    pub all_pass: bool,
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:<6} {:<6} {:>10} {:>10} {:>18} {:>8} {:>6}",
            "rho", "seed", "bound", "truth", "interval", "secs", "pass"
        )?;
        for c in &self.cases {
            writeln!(
                f,
                "{:<6} {:<6} {:>10.4} {:>10.4} {:>8.2}..{:<8.2} {:>8.1} {:>6}",
                c.rho,
                c.seed,
                c.bound,
                c.truth,
                c.interval_low,
                c.interval_high,
                c.seconds,
                if c.pass { "yes" } else { "NO" }
            )?;
        }
        writeln!(f, "overall: {}", if self.all_pass { "PASS" } else { "FAIL" })
    }
}

/// Accepted bound intervals per correlation level.
pub fn gaussian_interval(rho: f64) -> (f64, f64) {
    if rho == 0.0 {
        (-0.1, 0.1)
    } else if rho == 0.5 {
        (0.05, 0.20)
    } else if rho == 0.9 {
        (0.60, 0.90)
    } else {
        let truth = -0.5 * (1.0 - rho * rho).ln();
        (truth * 0.6, truth + 0.1)
    }
}

/// Run the correlated-Gaussian suite (`rho` in {0, 0.5, 0.9}) per seed and
/// compare the converged bounds against their analytic targets.
pub fn validate_estimator(config: &ValidationConfig) -> Result<ValidationReport> {
    let mut cases = Vec::new();
    for &seed in &config.seeds {
        for &rho in &[0.0, 0.5, 0.9] {
            let start = Instant::now();
            let mut rng = derive_rng(seed, 0x47415553, 0);
            let bound = mi::gaussian_benchmark(
                rho,
                config.steps,
                config.batch,
                &config.hidden,
                config.learning_rate,
                &mut rng,
            )?;
            let truth = if rho == 0.0 {
                0.0
            } else {
                mi::analytic_gaussian_mi(rho, 1)?
            };
            let (lo, hi) = gaussian_interval(rho);
            cases.push(ValidationCase {
                rho,
                seed,
                bound,
                truth,
                interval_low: lo,
                interval_high: hi,
                pass: bound >= lo && bound <= hi,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    let all_pass = cases.iter().all(|c| c.pass);
    Ok(ValidationReport { cases, all_pass })
}
