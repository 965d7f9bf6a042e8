//! Run configuration: training variants, schedule, and hyperparameters, with
//! a `desk` profile sized for laptop-scale runs and a `paper` profile that
//! keeps the full-scale defaults. Config files are line-based `key = value`
//! pairs; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::intrinsic::RewardMode;

/// Training variant selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    /// Sparse task reward only.
    Task,
    /// Unsupervised: MI reward only.
    MusicU,
    /// Task reward plus MI reward.
    MusicR,
    /// Task reward, policy initialized from a pretrained checkpoint.
    MusicF,
    /// Task reward with MI-prioritized replay.
    MusicP,
    /// Task plus MI reward from a frozen, transferred estimator.
    MusicT,
    /// Action-information reward only.
    Empowerment,
    /// Skill-discriminator reward only, skill-conditioned policy.
    Diayn,
    /// MI plus skill-discriminator reward, skill-conditioned policy.
    MusicDiayn,
}

impl Variant {
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "task" => Variant::Task,
            "music-u" => Variant::MusicU,
            "music-r" => Variant::MusicR,
            "music-f" => Variant::MusicF,
            "music-p" => Variant::MusicP,
            "music-t" => Variant::MusicT,
            "empowerment" => Variant::Empowerment,
            "diayn" => Variant::Diayn,
            "music-diayn" => Variant::MusicDiayn,
            other => {
                return Err(Error::Config(format!(
                    "unknown variant '{other}' (expected task|music-u|music-r|music-f|music-p|music-t|empowerment|diayn|music-diayn)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Task => "task",
            Variant::MusicU => "music-u",
            Variant::MusicR => "music-r",
            Variant::MusicF => "music-f",
            Variant::MusicP => "music-p",
            Variant::MusicT => "music-t",
            Variant::Empowerment => "empowerment",
            Variant::Diayn => "diayn",
            Variant::MusicDiayn => "music-diayn",
        }
    }

    pub fn reward_mode(&self) -> RewardMode {
        match self {
            Variant::Task | Variant::MusicF | Variant::MusicP => RewardMode::TaskOnly,
            Variant::MusicU => RewardMode::MusicU,
            Variant::MusicR | Variant::MusicT => RewardMode::MusicR,
            Variant::Empowerment => RewardMode::Empowerment,
            Variant::Diayn => RewardMode::Diayn,
            Variant::MusicDiayn => RewardMode::MusicPlusDiayn,
        }
    }

    /// MI-prioritized replay instead of uniform sampling.
    pub fn prioritized(&self) -> bool {
        matches!(self, Variant::MusicP)
    }

    /// Needs an MI estimator over (surrounding, agent) states.
    pub fn uses_music_estimator(&self) -> bool {
        matches!(
            self,
            Variant::MusicU
                | Variant::MusicR
                | Variant::MusicP
                | Variant::MusicT
                | Variant::MusicDiayn
        )
    }

    /// Trains that estimator (transfer keeps it frozen).
    pub fn trains_estimator(&self) -> bool {
        self.uses_music_estimator() && !matches!(self, Variant::MusicT)
    }

    pub fn uses_empowerment(&self) -> bool {
        matches!(self, Variant::Empowerment)
    }

    pub fn uses_discriminator(&self) -> bool {
        matches!(self, Variant::Diayn | Variant::MusicDiayn)
    }

    /// Skill one-hot appended to the policy conditioning.
    pub fn skill_conditioned(&self) -> bool {
        self.uses_discriminator()
    }

    /// Whether the policy sees the real goal. Unsupervised variants zero the
    /// goal slot so pretrained policies stay shape-compatible for fine-tuning.
    pub fn goal_conditioned(&self) -> bool {
        matches!(
            self,
            Variant::Task | Variant::MusicR | Variant::MusicF | Variant::MusicP | Variant::MusicT
        )
    }

    pub fn needs_policy_checkpoint(&self) -> bool {
        matches!(self, Variant::MusicF)
    }

    pub fn needs_estimator_checkpoint(&self) -> bool {
        matches!(self, Variant::MusicT)
    }
}

/// Full experiment description.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub env_name: String,
    pub variant: Variant,
    pub seed: u64,
    pub epochs: usize,
    pub cycles_per_epoch: usize,
    pub rollouts_per_cycle: usize,
    pub batches_per_cycle: usize,
    pub batch_size: usize,
    pub test_rollouts_per_epoch: usize,
    pub episode_length: usize,
    pub buffer_capacity: usize,
    pub agent_hidden_units: usize,
    pub agent_hidden_layers: usize,
    pub estimator_hidden_units: usize,
    pub estimator_hidden_layers: usize,
    pub gamma: f32,
    pub polyak_coefficient: f32,
    pub action_l2: f32,
    pub actor_lr: f32,
    pub critic_lr: f32,
    pub reward_scale: f64,
    pub clip_low: f64,
    pub clip_high: f64,
    pub estimator_lr: f32,
    pub ema_decay: f64,
    pub priority_alpha: f64,
    pub priority_beta: f64,
    pub priority_epsilon: f64,
    pub random_action_prob: f32,
    pub gaussian_noise_scale: f32,
    pub num_skills: usize,
    pub heldout_episodes: usize,
    pub refresh_all_priorities: bool,
    pub parallel_rollouts: bool,
    pub policy_checkpoint: Option<PathBuf>,
    pub estimator_checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Laptop-scale defaults: shorter schedule, smaller networks and buffer.
    pub fn desk(env_name: &str, variant: Variant, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            env_name: env_name.to_string(),
            variant,
            seed,
            epochs: 20,
            cycles_per_epoch: 10,
            rollouts_per_cycle: 2,
            batches_per_cycle: 40,
            batch_size: 128,
            test_rollouts_per_epoch: 10,
            episode_length: 50,
            buffer_capacity: 50_000,
            agent_hidden_units: 64,
            agent_hidden_layers: 3,
            estimator_hidden_units: 64,
            estimator_hidden_layers: 2,
            gamma: 0.98,
            polyak_coefficient: 0.95,
            action_l2: 1.0,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            reward_scale: 5000.0,
            clip_low: 0.0,
            clip_high: 1.0,
            estimator_lr: 1e-3,
            ema_decay: 0.99,
            priority_alpha: 0.6,
            priority_beta: 0.4,
            priority_epsilon: 1e-6,
            random_action_prob: 0.3,
            gaussian_noise_scale: 0.2,
            num_skills: 5,
            heldout_episodes: 16,
            refresh_all_priorities: false,
            parallel_rollouts: false,
            policy_checkpoint: None,
            estimator_checkpoint: None,
            out_dir: out_dir.into(),
        }
    }

    /// Full-scale defaults: 50 cycles per epoch, 256-wide batches and
    /// networks, a one-million-transition buffer.
    pub fn paper(env_name: &str, variant: Variant, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            epochs: 50,
            cycles_per_epoch: 50,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            agent_hidden_units: 256,
            agent_hidden_layers: 3,
            estimator_hidden_units: 256,
            estimator_hidden_layers: 3,
            ..Self::desk(env_name, variant, seed, out_dir)
        }
    }

    pub fn agent_hidden(&self) -> Vec<usize> {
        vec![self.agent_hidden_units; self.agent_hidden_layers]
    }

    pub fn estimator_hidden(&self) -> Vec<usize> {
        vec![self.estimator_hidden_units; self.estimator_hidden_layers]
    }

    pub fn mi_config(&self) -> crate::mi::MiConfig {
        crate::mi::MiConfig {
            reward_scale: self.reward_scale,
            clip_low: self.clip_low,
            clip_high: self.clip_high,
            estimator_lr: self.estimator_lr,
        }
    }

    pub fn sampler_config(&self) -> crate::replay::SamplerConfig {
        crate::replay::SamplerConfig {
            alpha: self.priority_alpha,
            beta: self.priority_beta,
            epsilon_priority: self.priority_epsilon,
        }
    }

    pub fn exploration_config(&self) -> crate::agent::ExplorationConfig {
        crate::agent::ExplorationConfig {
            random_action_prob: self.random_action_prob,
            gaussian_noise_scale: self.gaussian_noise_scale,
        }
    }

    /// Apply a config file on top of the current values. The optional
    /// `profile` key must come first since it resets every default.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let text = std::fs::read_to_string(path.as_ref())?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                ))
            })?;
            self.apply_kv(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
        }
        match key {
            "profile" => match value {
                "desk" => {
                    *self = RunConfig::desk(
                        &self.env_name.clone(),
                        self.variant,
                        self.seed,
                        self.out_dir.clone(),
                    )
                }
                "paper" => {
                    *self = RunConfig::paper(
                        &self.env_name.clone(),
                        self.variant,
                        self.seed,
                        self.out_dir.clone(),
                    )
                }
                other => return Err(Error::Config(format!("unknown profile '{other}'"))),
            },
            "seed" => self.seed = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "cycles_per_epoch" => self.cycles_per_epoch = parse(key, value)?,
            "rollouts_per_cycle" => self.rollouts_per_cycle = parse(key, value)?,
            "batches_per_cycle" => self.batches_per_cycle = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "test_rollouts_per_epoch" => self.test_rollouts_per_epoch = parse(key, value)?,
            "episode_length" => self.episode_length = parse(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "agent_hidden_units" => self.agent_hidden_units = parse(key, value)?,
            "agent_hidden_layers" => self.agent_hidden_layers = parse(key, value)?,
            "estimator_hidden_units" => self.estimator_hidden_units = parse(key, value)?,
            "estimator_hidden_layers" => self.estimator_hidden_layers = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "polyak_coefficient" => self.polyak_coefficient = parse(key, value)?,
            "action_l2" => self.action_l2 = parse(key, value)?,
            "actor_lr" => self.actor_lr = parse(key, value)?,
            "critic_lr" => self.critic_lr = parse(key, value)?,
            "reward_scale" => self.reward_scale = parse(key, value)?,
            "clip_low" => self.clip_low = parse(key, value)?,
            "clip_high" => self.clip_high = parse(key, value)?,
            "estimator_lr" => self.estimator_lr = parse(key, value)?,
            "ema_decay" => self.ema_decay = parse(key, value)?,
            "priority_alpha" => self.priority_alpha = parse(key, value)?,
            "priority_beta" => self.priority_beta = parse(key, value)?,
            "priority_epsilon" => self.priority_epsilon = parse(key, value)?,
            "random_action_prob" => self.random_action_prob = parse(key, value)?,
            "gaussian_noise_scale" => self.gaussian_noise_scale = parse(key, value)?,
            "num_skills" => self.num_skills = parse(key, value)?,
            "heldout_episodes" => self.heldout_episodes = parse(key, value)?,
            "refresh_all_priorities" => self.refresh_all_priorities = parse(key, value)?,
            "parallel_rollouts" => self.parallel_rollouts = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        crate::env::EnvKind::from_name(&self.env_name)?;
        self.mi_config().validate()?;
        if self.episode_length == 0 {
            return Err(Error::Config("episode_length must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.polyak_coefficient) {
            return Err(Error::Config("polyak_coefficient must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.random_action_prob) {
            return Err(Error::Config("random_action_prob must be in [0, 1]".into()));
        }
        if self.num_skills < 2 && self.variant.skill_conditioned() {
            return Err(Error::Config("skill variants need num_skills >= 2".into()));
        }
        if self.variant.needs_policy_checkpoint() && self.policy_checkpoint.is_none() {
            return Err(Error::Config(
                "music-f requires --policy-ckpt with a pretrained policy".into(),
            ));
        }
        if self.variant.needs_estimator_checkpoint() && self.estimator_checkpoint.is_none() {
            return Err(Error::Config(
                "music-t requires --estimator-ckpt with a pretrained estimator".into(),
            ));
        }
        if self.heldout_episodes < 2 && self.variant.uses_music_estimator() {
            return Err(Error::Config("heldout_episodes must be at least 2".into()));
        }
        Ok(())
    }
}
