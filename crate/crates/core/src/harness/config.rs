use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{Quantization, CANONICAL_DROP_PROBS, RAYLEIGH_SCALE_RANGE};
use crate::ddpg::{TdTargetMode, TrainConfig, Variant};
use crate::estimation::{LtiProcess, DEFAULT_SPECTRAL_RANGE};
use crate::error::{Error, Result};

/// Independent random streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    /// Processes and channel distributions.
    System = 0,
    /// Channel draws and packet drops while training.
    Environment = 1,
    /// Network initialisation, exploration, replay and penalty sampling.
    Agent = 2,
    /// Rollouts of the final policies.
    Evaluation = 3,
}

/// First word of ChaCha8 seeded with `master` on the stream's number.
pub fn component_seed(master: u64, stream: SeedStream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

pub fn component_rng(master: u64, stream: SeedStream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(component_seed(master, stream))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub num_devices: usize,
    pub num_channels: usize,
    pub levels: usize,
    pub tau_max: u32,
    pub process_state_dim: usize,
    pub process_meas_dim: usize,
    pub spectral_range: (f64, f64),
    pub rayleigh_scale_range: (f64, f64),
    pub quantization: Quantization,
    /// One drop probability per level, shared by every link.
    pub drop_probs: Vec<f64>,
    /// Optional per-link tables, `N * M * levels` values in device, channel,
    /// level order. Overrides `drop_probs`.
    pub per_link_drop_probs: Option<Vec<f64>>,
    /// Optional explicit level distributions, `N * M * levels` values.
    /// Overrides the Rayleigh quantization.
    pub level_probs: Option<Vec<f64>>,
    /// Optional explicit processes, one per device. Generated from the seed
    /// when absent.
    pub processes: Option<Vec<LtiProcess>>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_devices: 6,
            num_channels: 3,
            levels: 5,
            tau_max: crate::env::DEFAULT_TAU_MAX,
            process_state_dim: 2,
            process_meas_dim: 1,
            spectral_range: DEFAULT_SPECTRAL_RANGE,
            rayleigh_scale_range: RAYLEIGH_SCALE_RANGE,
            quantization: Quantization::EqualQuantile,
            drop_probs: CANONICAL_DROP_PROBS.to_vec(),
            per_link_drop_probs: None,
            level_probs: None,
            processes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub episodes: usize,
    pub horizon: usize,
    /// Also evaluate the random-feasible and greedy-AoI schedules.
    pub baselines: bool,
    /// Write per-step evaluation trajectories.
    pub dump_trajectories: bool,
    /// Write per-step training trajectories.
    pub dump_training: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            episodes: 20,
            horizon: crate::env::DEFAULT_HORIZON,
            baselines: false,
            dump_trajectories: false,
            dump_training: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Variants trained by a run, in order.
    pub variants: Vec<Variant>,
    pub system: SystemConfig,
    /// Shared training settings; the `variant` field is set per run.
    pub train: TrainConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            variants: Variant::ALL.to_vec(),
            system: SystemConfig::default(),
            train: TrainConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Tiny,
    Small,
    Medium,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Tiny, Preset::Small, Preset::Medium];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Small => "small",
            Preset::Medium => "medium",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown preset `{s}` (expected tiny, small or medium)")))
    }
}

impl ExperimentConfig {
    /// Desk-scale settings for the named preset.
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Tiny => Self {
                name: "tiny".into(),
                system: SystemConfig {
                    num_devices: 2,
                    num_channels: 1,
                    levels: 2,
                    tau_max: 6,
                    drop_probs: vec![0.01, 0.2],
                    ..Default::default()
                },
                train: TrainConfig {
                    gamma: 0.95,
                    episodes: 300,
                    horizon: 200,
                    batch_size: 64,
                    replay_capacity: 20_000,
                    lr_actor: 1e-3,
                    lr_critic: 1e-3,
                    soft_update: 0.01,
                    td_target: TdTargetMode::ExactMax,
                    actor_hidden: vec![32, 32],
                    critic_hidden: vec![32, 32],
                    monotone_state_hidden: 32,
                    monotone_action_hidden: 16,
                    ..Default::default()
                },
                evaluation: EvaluationConfig {
                    episodes: 200,
                    horizon: 300,
                    ..Default::default()
                },
                ..Default::default()
            },
            Preset::Small => Self {
                name: "small".into(),
                variants: vec![Variant::Baseline, Variant::Ma],
                system: SystemConfig::default(),
                train: TrainConfig {
                    episodes: 150,
                    horizon: 100,
                    batch_size: 64,
                    lr_actor: 3e-4,
                    lr_critic: 1e-3,
                    actor_hidden: vec![64, 64, 64],
                    critic_hidden: vec![64],
                    monotone_state_hidden: 64,
                    monotone_action_hidden: 64,
                    ..Default::default()
                },
                evaluation: EvaluationConfig {
                    episodes: 10,
                    horizon: 500,
                    ..Default::default()
                },
                ..Default::default()
            },
            Preset::Medium => Self {
                name: "medium".into(),
                variants: vec![Variant::Baseline, Variant::Mrii],
                system: SystemConfig {
                    num_devices: 14,
                    num_channels: 7,
                    ..Default::default()
                },
                train: TrainConfig {
                    episodes: 150,
                    horizon: 100,
                    batch_size: 64,
                    lr_actor: 3e-4,
                    lr_critic: 1e-3,
                    actor_hidden: vec![64, 64, 64],
                    critic_hidden: vec![64, 64, 64],
                    ..Default::default()
                },
                evaluation: EvaluationConfig {
                    episodes: 10,
                    horizon: 500,
                    ..Default::default()
                },
                ..Default::default()
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let path = e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<root>".into());
            Error::config(path, e.message())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { path: field, message } => Error::config(format!("{}: {field}", path.display()), message),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config is always serializable")
    }

    /// Training settings for one variant.
    pub fn train_config(&self, variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        // the name ends up in CSV cells and directory names
        if self.name.is_empty() || self.name.contains([',', '/', '\\', '\n', '"']) {
            return Err(Error::config("name", "must be non-empty without commas, quotes, slashes or newlines"));
        }
        let s = &self.system;
        if s.num_channels == 0 || s.num_channels >= s.num_devices {
            return Err(Error::config("system.num_channels", "need 1 <= M < N"));
        }
        if s.levels < 2 || s.levels > u8::MAX as usize {
            return Err(Error::config("system.levels", "must lie in 2..=255"));
        }
        if s.tau_max == 0 {
            return Err(Error::config("system.tau_max", "must be >= 1"));
        }
        if s.process_state_dim == 0 || s.process_meas_dim == 0 {
            return Err(Error::config("system.process_state_dim", "process dimensions must be >= 1"));
        }
        let (lo, hi) = s.spectral_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::config("system.spectral_range", "need 0 < lo < hi"));
        }
        let (lo, hi) = s.rayleigh_scale_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::config("system.rayleigh_scale_range", "need 0 < lo < hi"));
        }
        if let Quantization::FixedThresholds { thresholds } = &s.quantization {
            if thresholds.len() + 1 != s.levels {
                return Err(Error::config("system.quantization.thresholds", "need levels - 1 thresholds"));
            }
        }
        if s.per_link_drop_probs.is_none() && s.drop_probs.len() != s.levels {
            return Err(Error::config("system.drop_probs", "need one drop probability per level"));
        }
        let links = s.num_devices * s.num_channels * s.levels;
        if s.per_link_drop_probs.as_ref().is_some_and(|p| p.len() != links) {
            return Err(Error::config("system.per_link_drop_probs", "need N * M * levels values"));
        }
        if s.level_probs.as_ref().is_some_and(|p| p.len() != links) {
            return Err(Error::config("system.level_probs", "need N * M * levels values"));
        }
        if let Some(p) = &s.processes {
            if p.len() != s.num_devices {
                return Err(Error::config("system.processes", "need one process per device"));
            }
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "list at least one variant"));
        }
        self.train.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::config(format!("train.{path}"), message),
            other => other,
        })?;
        if self.evaluation.episodes == 0 || self.evaluation.horizon == 0 {
            return Err(Error::config("evaluation", "episodes and horizon must be >= 1"));
        }
        Ok(())
    }

    /// Everything except the seed, as TOML; equal fingerprints mean runs
    /// are comparable.
    pub fn fingerprint(&self) -> String {
        Self { seed: 0, ..self.clone() }.to_toml()
    }
}
