use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{component_rng, ExperimentConfig, SeedStream};
use crate::channel::{quantize_rayleigh, ChannelModel, DropTable};
use crate::env::SchedulingEnv;
use crate::error::{Error, Result};
use crate::estimation::{sample_process, CostModel, LtiProcess};

const MAX_SYSTEM_ATTEMPTS: usize = 100;

/// Processes and channel statistics of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSnapshot {
    pub processes: Vec<LtiProcess>,
    /// Rayleigh scale per link, device-major. Empty when explicit level
    /// distributions were supplied.
    pub rayleigh_scales: Vec<f64>,
    pub level_probs: Vec<f64>,
    pub drop: DropTable,
    /// `g_n(1..=tau_max)` per device.
    pub cost_tables: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct GeneratedSystem {
    pub snapshot: SystemSnapshot,
    pub env: SchedulingEnv,
}

/// Builds the system from the config, drawing whatever is not given
/// explicitly from the system stream of the master seed: one process per
/// device, then one Rayleigh scale per link.
pub fn generate_system(config: &ExperimentConfig) -> Result<GeneratedSystem> {
    let s = &config.system;
    let mut rng = component_rng(config.seed, SeedStream::System);
    let mut processes = Vec::with_capacity(s.num_devices);
    let mut costs = Vec::with_capacity(s.num_devices);
    match &s.processes {
        Some(given) => {
            for p in given {
                costs.push(CostModel::new(p, s.tau_max)?);
                processes.push(p.clone());
            }
        }
        None => {
            for _ in 0..s.num_devices {
                let (p, g) = generate_device(&mut rng, config)?;
                processes.push(p);
                costs.push(g);
            }
        }
    }
    let links = s.num_devices * s.num_channels;
    let (rayleigh_scales, level_probs) = match &s.level_probs {
        Some(q) => (Vec::new(), q.clone()),
        None => {
            let (lo, hi) = s.rayleigh_scale_range;
            let scales: Vec<f64> = (0..links).map(|_| rng.random_range(lo..hi)).collect();
            let mut q = Vec::with_capacity(links * s.levels);
            for &scale in &scales {
                q.extend(quantize_rayleigh(scale, s.levels, &s.quantization)?);
            }
            (scales, q)
        }
    };
    let drop = match &s.per_link_drop_probs {
        Some(p) => DropTable::PerLink(p.clone()),
        None => DropTable::Shared(s.drop_probs.clone()),
    };
    let channel = ChannelModel::new(s.num_devices, s.num_channels, s.levels, level_probs.clone(), drop.clone())?;
    let cost_tables = costs.iter().map(|g| g.table().to_vec()).collect();
    let env = SchedulingEnv::new(channel, costs, s.tau_max)?;
    Ok(GeneratedSystem {
        snapshot: SystemSnapshot {
            processes,
            rayleigh_scales,
            level_probs,
            drop,
            cost_tables,
        },
        env,
    })
}

fn generate_device<R: Rng + ?Sized>(rng: &mut R, config: &ExperimentConfig) -> Result<(LtiProcess, CostModel)> {
    let s = &config.system;
    for _ in 0..MAX_SYSTEM_ATTEMPTS {
        let p = sample_process(rng, s.process_state_dim, s.process_meas_dim, s.spectral_range)?;
        if let Ok(g) = CostModel::new(&p, s.tau_max) {
            return Ok((p, g));
        }
    }
    Err(Error::Generation {
        what: "device cost model",
        attempts: MAX_SYSTEM_ATTEMPTS,
    })
}
