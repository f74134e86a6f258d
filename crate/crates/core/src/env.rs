//! The scheduling MDP: AoI/channel state, feasible assignments, dynamics.

use rand::Rng;

use crate::channel::{ChannelMatrix, ChannelModel};
use crate::error::{Error, Result};
use crate::estimation::CostModel;

/// Default saturation point of the environment AoI.
pub const DEFAULT_TAU_MAX: u32 = 30;
/// Default episode length.
pub const DEFAULT_HORIZON: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemState {
    /// AoI per device, each `>= 1`.
    pub tau: Vec<u32>,
    pub h: ChannelMatrix,
}

impl SystemState {
    pub fn new(tau: Vec<u32>, h: ChannelMatrix) -> Result<Self> {
        if tau.len() != h.num_devices() {
            return Err(Error::invalid("AoI vector length must equal the number of devices"));
        }
        if tau.contains(&0) {
            return Err(Error::invalid("AoI entries must be >= 1"));
        }
        Ok(Self { tau, h })
    }

    pub fn num_devices(&self) -> usize {
        self.tau.len()
    }
}

/// `a[n] = 0` leaves device `n` idle, `a[n] = m` puts it on channel `m` (one-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScheduleAction(pub Vec<usize>);

impl ScheduleAction {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Device assigned to channel `m` (one-based), if any.
    pub fn device_on(&self, m: usize) -> Option<usize> {
        self.0.iter().position(|&c| c == m)
    }
}

/// True iff every entry lies in `0..=M` and every channel `1..=M` is used
/// exactly once.
pub fn validate_action(a: &[usize], num_devices: usize, num_channels: usize) -> bool {
    if a.len() != num_devices {
        return false;
    }
    let mut used = vec![0usize; num_channels + 1];
    for &c in a {
        if c > num_channels {
            return false;
        }
        used[c] += 1;
    }
    used[1..].iter().all(|&k| k == 1)
}

/// `-sum_n g_n(tau_n)`.
pub fn reward(state: &SystemState, costs: &[CostModel]) -> f64 {
    -sum_cost(state, costs)
}

/// `sum_n g_n(tau_n)`.
pub fn sum_cost(state: &SystemState, costs: &[CostModel]) -> f64 {
    state
        .tau
        .iter()
        .zip(costs)
        .map(|(&t, g)| g.aoi_cost(t))
        .sum()
}

/// Network input layout: `tau_n / tau_max` for every device, followed by
/// `h_{n,m} / levels` in row-major order. Length `N (M + 1)`.
pub fn encode_state(state: &SystemState, tau_max: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(state.tau.len() * (state.h.num_channels() + 1));
    encode_state_into(state, tau_max, &mut out);
    out
}

pub fn encode_state_into(state: &SystemState, tau_max: u32, out: &mut Vec<f64>) {
    let tmax = tau_max as f64;
    let levels = state.h.levels() as f64;
    out.extend(state.tau.iter().map(|&t| t as f64 / tmax));
    out.extend(state.h.entries().iter().map(|&h| h as f64 / levels));
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: SystemState,
    /// Reward of the state the action was taken in.
    pub reward: f64,
    pub delivered: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SchedulingEnv {
    channel: ChannelModel,
    costs: Vec<CostModel>,
    tau_max: u32,
}

impl SchedulingEnv {
    pub fn new(channel: ChannelModel, costs: Vec<CostModel>, tau_max: u32) -> Result<Self> {
        if costs.len() != channel.num_devices() {
            return Err(Error::invalid("need one cost model per device"));
        }
        if channel.num_channels() > channel.num_devices() {
            return Err(Error::invalid("more channels than devices"));
        }
        if tau_max == 0 {
            return Err(Error::invalid("tau_max must be >= 1"));
        }
        Ok(Self {
            channel,
            costs,
            tau_max,
        })
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    pub fn costs(&self) -> &[CostModel] {
        &self.costs
    }

    pub fn tau_max(&self) -> u32 {
        self.tau_max
    }

    pub fn num_devices(&self) -> usize {
        self.channel.num_devices()
    }

    pub fn num_channels(&self) -> usize {
        self.channel.num_channels()
    }

    pub fn levels(&self) -> usize {
        self.channel.levels()
    }

    /// Length of the encoded state vector.
    pub fn state_dim(&self) -> usize {
        self.num_devices() * (self.num_channels() + 1)
    }

    pub fn reward(&self, state: &SystemState) -> f64 {
        reward(state, &self.costs)
    }

    pub fn sum_cost(&self, state: &SystemState) -> f64 {
        sum_cost(state, &self.costs)
    }

    pub fn encode_state(&self, state: &SystemState) -> Vec<f64> {
        encode_state(state, self.tau_max)
    }

    /// All devices fresh (`tau = 1`), channel drawn from the fading model.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> SystemState {
        SystemState {
            tau: vec![1; self.num_devices()],
            h: self.channel.sample_channel_matrix(rng),
        }
    }

    fn check_action(&self, action: &ScheduleAction) -> Result<()> {
        if validate_action(&action.0, self.num_devices(), self.num_channels()) {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "infeasible schedule {:?} for N={}, M={}",
                action.0,
                self.num_devices(),
                self.num_channels()
            )))
        }
    }

    /// Drop probability seen by device `n` under `action`, `None` when idle.
    fn link_drop(&self, state: &SystemState, action: &ScheduleAction, n: usize) -> Option<f64> {
        match action.0[n] {
            0 => None,
            m => Some(
                self.channel
                    .drop_probability(n, m - 1, state.h.get(n, m - 1))
                    .expect("validated state"),
            ),
        }
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &SystemState,
        action: &ScheduleAction,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        self.check_action(action)?;
        let reward = self.reward(state);
        let mut delivered = vec![false; self.num_devices()];
        let mut tau = Vec::with_capacity(self.num_devices());
        for (n, &t) in state.tau.iter().enumerate() {
            let ok = match self.link_drop(state, action, n) {
                Some(p) => rng.random::<f64>() >= p,
                None => false,
            };
            delivered[n] = ok;
            tau.push(if ok { 1 } else { (t + 1).min(self.tau_max) });
        }
        let h = self.channel.sample_channel_matrix(rng);
        Ok(StepOutcome {
            next_state: SystemState { tau, h },
            reward,
            delivered,
        })
    }

    /// `Pr(tau+ | tau, H, a)`, the AoI part of the transition kernel.
    pub fn aoi_transition_prob(&self, state: &SystemState, action: &ScheduleAction, next_tau: &[u32]) -> f64 {
        state
            .tau
            .iter()
            .zip(next_tau)
            .enumerate()
            .map(|(n, (&t, &t_next))| {
                let fail = (t + 1).min(self.tau_max);
                let p_drop = self.link_drop(state, action, n).unwrap_or(1.0);
                let mut pr = 0.0;
                if t_next == 1 {
                    pr += 1.0 - p_drop;
                }
                if t_next == fail {
                    pr += p_drop;
                }
                pr
            })
            .product()
    }

    /// `Pr(s+ | s, a) = Pr(tau+ | tau, H, a) Pr(H+)`.
    pub fn transition_prob(&self, state: &SystemState, action: &ScheduleAction, next: &SystemState) -> f64 {
        if !validate_action(&action.0, self.num_devices(), self.num_channels()) {
            return 0.0;
        }
        self.aoi_transition_prob(state, action, &next.tau) * self.channel.matrix_probability(&next.h)
    }
}
