use rand::Rng;

use crate::env::{ScheduleAction, SystemState};
use crate::neural::{Critic, Matrix};

/// Layout of the encoded state vector: `N` AoI entries scaled by `1/tau_max`
/// followed by `N * M` channel levels scaled by `1/levels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateCoding {
    pub num_devices: usize,
    pub num_channels: usize,
    pub tau_max: u32,
    pub levels: usize,
}

impl StateCoding {
    pub fn dim(&self) -> usize {
        self.num_devices * (self.num_channels + 1)
    }

    /// Encoded index of the AoI of device `n`.
    pub fn aoi_index(&self, n: usize) -> usize {
        n
    }

    /// Encoded index of the level of link (`n`, `m`), both zero-based.
    pub fn channel_index(&self, n: usize, m: usize) -> usize {
        self.num_devices + n * self.num_channels + m
    }

    pub fn is_channel(&self, j: usize) -> bool {
        j >= self.num_devices
    }

    /// Change of encoded coordinate `j` caused by a one-unit raw increment.
    /// AoI increments past `tau_max` extrapolate the same linear scale.
    pub fn unit_step(&self, j: usize) -> f64 {
        if self.is_channel(j) {
            1.0 / self.levels as f64
        } else {
            1.0 / self.tau_max as f64
        }
    }

    /// True when coordinate `j` of `state` is a channel already at the top
    /// level, so it cannot be incremented.
    pub fn at_top_level(&self, state: &SystemState, j: usize) -> bool {
        if !self.is_channel(j) {
            return false;
        }
        let k = j - self.num_devices;
        state.h.get(k / self.num_channels, k % self.num_channels) as usize >= self.levels
    }

    /// `s` with coordinate `j` increased by one raw unit.
    pub fn incremented(&self, s: &[f64], j: usize) -> Vec<f64> {
        let mut out = s.to_vec();
        out[j] += self.unit_step(j);
        out
    }
}

/// Encoded indices whose increase can change `Q(s, a)`: every AoI entry plus
/// the link level of each (device, channel) pair the action uses. Sorted.
pub fn effective_set(action: &ScheduleAction, coding: &StateCoding) -> Vec<usize> {
    let mut j: Vec<usize> = (0..coding.num_devices).map(|n| coding.aoi_index(n)).collect();
    for (n, &m) in action.0.iter().enumerate() {
        if m > 0 {
            j.push(coding.channel_index(n, m - 1));
        }
    }
    j.sort_unstable();
    j
}

/// Uniform subset of size `min(k, |candidates|)` without replacement, in
/// ascending order. Draws nothing from `rng` when the whole set (or nothing)
/// is returned.
pub fn sample_penalty_indices<R: Rng + ?Sized>(candidates: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    if k >= candidates.len() {
        return candidates.to_vec();
    }
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Candidates for the increment penalty: the effective set minus channel
/// entries already at the top level.
pub fn increment_candidates(state: &SystemState, action: &ScheduleAction, coding: &StateCoding) -> Vec<usize> {
    effective_set(action, coding)
        .into_iter()
        .filter(|&j| !coding.at_top_level(state, j))
        .collect()
}

/// `sum_j max(0, dQ/ds_j)` over `indices`, from one backward pass.
pub fn penalty_type1(critic: &Critic, s: &[f64], a: &[f64], indices: &[usize]) -> f64 {
    let cache = critic
        .forward(&Matrix::from_row(s), &Matrix::from_row(a))
        .expect("penalty inputs match critic dims");
    let (_, ds, _) = critic.backward(&cache, &[1.0]);
    indices.iter().map(|&j| ds.data[j].max(0.0)).sum()
}

/// `sum_j max(0, Q(s + e_j, a) - Q(s, a))` over `indices`, where `e_j` is a
/// one-unit raw increment of coordinate `j`.
pub fn penalty_type2(critic: &Critic, s: &[f64], a: &[f64], indices: &[usize], coding: &StateCoding) -> f64 {
    let base = critic.q(s, a).expect("penalty inputs match critic dims");
    indices
        .iter()
        .map(|&j| {
            let up = critic
                .q(&coding.incremented(s, j), a)
                .expect("penalty inputs match critic dims");
            (up - base).max(0.0)
        })
        .sum()
}
