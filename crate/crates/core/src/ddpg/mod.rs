//! DDPG training for the scheduling MDP: replay, exploration, projection of
//! continuous actor outputs to feasible schedules, and the four critic
//! training variants.

mod action;
mod agent;
mod penalty;
mod replay;

pub use action::{decode_action, encode_action, project_action};
pub use agent::{Agent, CriticStats, EXACT_MAX_ACTION_LIMIT};
pub use penalty::{
    effective_set, increment_candidates, penalty_type1, penalty_type2, sample_penalty_indices, StateCoding,
};
pub use replay::{ReplayBuffer, Transition};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ScheduleAction, SchedulingEnv, SystemState};
use crate::error::{Error, Result};

/// Critic training variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Plain critic, TD loss only.
    Baseline,
    /// Sign-constrained monotone critic.
    Ma,
    /// Plain critic with the positive-derivative penalty.
    Mri,
    /// Plain critic with the positive-increment penalty.
    Mrii,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Ma, Variant::Mri, Variant::Mrii];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Ma => "ma",
            Variant::Mri => "mri",
            Variant::Mrii => "mrii",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}` (expected baseline, ma, mri or mrii)")))
    }
}

/// How the bootstrap action in the TD target is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdTargetMode {
    /// Projected output of the target actor.
    TargetActor,
    /// Maximum of the target critic over every feasible schedule.
    ExactMax,
}

/// Exploration noise standard deviation, as a fraction of `M`, decaying
/// linearly from `start` to `end` over the first `decay_fraction` of the
/// episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            start: 0.5,
            end: 0.05,
            decay_fraction: 0.5,
        }
    }
}

impl NoiseSchedule {
    pub fn sigma(&self, episode: usize, episodes: usize, num_channels: usize) -> f64 {
        let span = self.decay_fraction * episodes as f64;
        let progress = if span <= 0.0 {
            1.0
        } else {
            (episode as f64 / span).min(1.0)
        };
        num_channels as f64 * (self.start + (self.end - self.start) * progress)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub gamma: f64,
    pub episodes: usize,
    pub horizon: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Transitions collected before the first update; `None` means ten batches.
    pub warmup: Option<usize>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Inverse-time decay per episode: `lr = lr0 / (1 + lr_decay * episode)`.
    pub lr_decay: f64,
    /// Soft target-update weight.
    pub soft_update: f64,
    /// Number of penalty terms sampled per transition.
    pub penalty_samples: usize,
    pub penalty_weight: f64,
    /// Multiplies rewards inside the TD target; `None` picks
    /// `(1 - gamma) / sum_n g_n(1)`.
    pub reward_scale: Option<f64>,
    pub noise: NoiseSchedule,
    pub td_target: TdTargetMode,
    /// Query the critic in the actor update at the projection of the actor
    /// output onto the hyperplane containing all encoded feasible schedules.
    pub hull_projection: bool,
    pub actor_hidden: Vec<usize>,
    /// Hidden widths of the plain critic.
    pub critic_hidden: Vec<usize>,
    /// Hidden width of the monotone critic's state path.
    pub monotone_state_hidden: usize,
    /// Hidden width of the monotone critic's action path.
    pub monotone_action_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Baseline,
            gamma: 0.95,
            episodes: 300,
            horizon: crate::env::DEFAULT_HORIZON,
            batch_size: 128,
            replay_capacity: 20_000,
            warmup: None,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            lr_decay: 1e-3,
            soft_update: 0.005,
            penalty_samples: 2,
            penalty_weight: 1.0,
            reward_scale: None,
            noise: NoiseSchedule::default(),
            td_target: TdTargetMode::TargetActor,
            hull_projection: true,
            actor_hidden: vec![64, 64, 64],
            critic_hidden: vec![64],
            monotone_state_hidden: 64,
            monotone_action_hidden: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |path: &str, msg: &str| Err(Error::config(path, msg));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail("gamma", "must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be >= 1");
        }
        if self.batch_size > self.replay_capacity {
            return fail("batch_size", "must not exceed replay_capacity");
        }
        if self.horizon == 0 {
            return fail("horizon", "must be >= 1");
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return fail("lr_actor", "learning rates must be positive");
        }
        if !(self.lr_decay >= 0.0) {
            return fail("lr_decay", "must be >= 0");
        }
        if !(self.soft_update > 0.0 && self.soft_update <= 1.0) {
            return fail("soft_update", "must lie in (0, 1]");
        }
        if !(self.penalty_weight >= 0.0) {
            return fail("penalty_weight", "must be >= 0");
        }
        if let Some(s) = self.reward_scale {
            if !(s > 0.0 && s.is_finite()) {
                return fail("reward_scale", "must be positive");
            }
        }
        let n = &self.noise;
        if !(n.start >= 0.0 && n.end >= 0.0 && n.decay_fraction >= 0.0) {
            return fail("noise", "noise parameters must be >= 0");
        }
        if self.actor_hidden.contains(&0) {
            return fail("actor_hidden", "widths must be >= 1");
        }
        if self.critic_hidden.contains(&0) {
            return fail("critic_hidden", "widths must be >= 1");
        }
        if self.monotone_state_hidden == 0 || self.monotone_action_hidden == 0 {
            return fail("monotone_state_hidden", "widths must be >= 1");
        }
        Ok(())
    }

    pub fn warmup_transitions(&self) -> usize {
        self.warmup.unwrap_or(10 * self.batch_size).max(self.batch_size)
    }

    pub fn lr_at(&self, lr0: f64, episode: usize) -> f64 {
        lr0 / (1.0 + self.lr_decay * episode as f64)
    }
}

/// `(1 - gamma) / sum_n g_n(1)`: keeps critic targets of order one.
pub fn auto_reward_scale(env: &SchedulingEnv, gamma: f64) -> f64 {
    let fresh: f64 = env.costs().iter().map(|g| g.aoi_cost(1)).sum();
    (1.0 - gamma) / fresh
}

/// One row per training episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Time-average of `sum_n g_n(tau_n)` over the episode.
    pub avg_sum_cost: f64,
    /// Mean critic loss over the episode's updates, 0 when there were none.
    pub critic_loss: f64,
    pub actor_loss: f64,
    /// Mean per-transition penalty before weighting.
    pub penalty: f64,
    pub updates: usize,
    pub wall_seconds: f64,
}

/// Receives training progress. Closures over [`EpisodeMetrics`] implement it.
pub trait TrainSink {
    /// Called for every environment step with the state acted in.
    fn on_step(&mut self, _episode: usize, _step: usize, _state: &SystemState, _action: &ScheduleAction, _sum_cost: f64) -> Result<()> {
        Ok(())
    }

    fn on_episode(&mut self, metrics: &EpisodeMetrics) -> Result<()>;
}

impl<F: FnMut(&EpisodeMetrics) -> Result<()>> TrainSink for F {
    fn on_episode(&mut self, metrics: &EpisodeMetrics) -> Result<()> {
        self(metrics)
    }
}

/// Runs `config.episodes` episodes of interaction and learning. `env_rng`
/// drives the environment; exploration, replay and penalty sampling use the
/// agent's own streams.
pub fn train<R: Rng + ?Sized>(
    agent: &mut Agent,
    env: &SchedulingEnv,
    config: &TrainConfig,
    env_rng: &mut R,
    sink: &mut dyn TrainSink,
) -> Result<()> {
    config.validate()?;
    agent.check_env(env)?;
    let scale = config
        .reward_scale
        .unwrap_or_else(|| auto_reward_scale(env, config.gamma));
    let mut replay = ReplayBuffer::new(config.replay_capacity)?;
    let warmup = config.warmup_transitions();
    let m = env.num_channels();
    for episode in 0..config.episodes {
        let started = Instant::now();
        let sigma = config.noise.sigma(episode, config.episodes, m);
        let lr_actor = config.lr_at(config.lr_actor, episode);
        let lr_critic = config.lr_at(config.lr_critic, episode);
        let mut state = env.reset(env_rng);
        let mut s_enc = env.encode_state(&state);
        let mut cost = 0.0;
        let (mut critic_loss, mut actor_loss, mut penalty, mut updates) = (0.0, 0.0, 0.0, 0usize);
        for step in 0..config.horizon {
            let raw = agent.select_action(&s_enc, sigma);
            let action = project_action(&raw, m);
            let out = env.step(&state, &action, env_rng)?;
            cost -= out.reward;
            sink.on_step(episode, step, &state, &action, -out.reward)?;
            let next_enc = env.encode_state(&out.next_state);
            replay.push(Transition {
                state: s_enc,
                raw_action: raw,
                action,
                reward: out.reward,
                next_state: next_enc.clone(),
                raw_state: state,
                raw_next_state: out.next_state.clone(),
            });
            state = out.next_state;
            s_enc = next_enc;

            if replay.len() >= warmup {
                let batch = agent.sample_batch(&replay, config.batch_size)?;
                let stats = agent.critic_update(&batch, config, scale, lr_critic)?;
                let a_loss = agent.actor_update(&batch, lr_actor)?;
                agent.soft_update_targets(config.soft_update);
                critic_loss += stats.loss;
                penalty += stats.penalty;
                actor_loss += a_loss;
                updates += 1;
            }
        }
        if !agent.is_finite() {
            return Err(Error::Diverged {
                variant: agent.variant().to_string(),
                episode,
            });
        }
        let per = |x: f64| if updates > 0 { x / updates as f64 } else { 0.0 };
        sink.on_episode(&EpisodeMetrics {
            episode,
            avg_sum_cost: cost / config.horizon as f64,
            critic_loss: per(critic_loss),
            actor_loss: per(actor_loss),
            penalty: per(penalty),
            updates,
            wall_seconds: started.elapsed().as_secs_f64(),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("MRII".parse::<Variant>().unwrap(), Variant::Mrii);
        assert!("td3".parse::<Variant>().is_err());
    }

    #[test]
    fn noise_schedule_decays_linearly_then_holds() {
        let n = NoiseSchedule::default();
        assert!((n.sigma(0, 100, 3) - 1.5).abs() < 1e-12);
        assert!((n.sigma(25, 100, 3) - 3.0 * 0.275).abs() < 1e-12);
        assert!((n.sigma(50, 100, 3) - 0.15).abs() < 1e-12);
        assert!((n.sigma(99, 100, 3) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn learning_rate_decay() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(1e-3, 0), 1e-3);
        assert!((c.lr_at(1e-3, 1000) - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                gamma: 1.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 50,
                replay_capacity: 10,
                ..Default::default()
            },
            TrainConfig {
                soft_update: 0.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config { .. })));
        }
    }

    #[test]
    fn config_toml_round_trip() {
        let c = TrainConfig {
            variant: Variant::Mrii,
            td_target: TdTargetMode::ExactMax,
            reward_scale: Some(0.25),
            ..Default::default()
        };
        let text = toml::to_string(&c).unwrap();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: TrainConfig = toml::from_str("variant = \"ma\"\nepisodes = 7\n").unwrap();
        assert_eq!(partial.variant, Variant::Ma);
        assert_eq!(partial.episodes, 7);
        assert_eq!(partial.batch_size, 128);
    }
}
