use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ScheduleAction, SchedulingEnv, SystemState};

/// Fixed comparison schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Uniform over all feasible schedules.
    RandomFeasible,
    /// Highest current costs first, each on its most reliable free channel.
    GreedyAoi,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 2] = [BaselineKind::RandomFeasible, BaselineKind::GreedyAoi];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::RandomFeasible => "random_feasible",
            BaselineKind::GreedyAoi => "greedy_aoi",
        }
    }
}

/// Uniform draw over the `N! / (N - M)!` feasible schedules: channel 1 goes
/// to a uniform device, channel 2 to a uniform remaining device, and so on.
pub fn random_feasible<R: Rng + ?Sized>(num_devices: usize, num_channels: usize, rng: &mut R) -> ScheduleAction {
    let mut free: Vec<usize> = (0..num_devices).collect();
    let mut a = vec![0; num_devices];
    for m in 1..=num_channels {
        let k = rng.random_range(0..free.len());
        a[free.swap_remove(k)] = m;
    }
    ScheduleAction(a)
}

/// The `M` devices with the largest `g_n(tau_n)` (ties to the lower index)
/// take channels in that order, each picking the free channel with the
/// lowest drop probability on its link (ties to the lower channel).
pub fn greedy_aoi(env: &SchedulingEnv, state: &SystemState) -> ScheduleAction {
    let n = env.num_devices();
    let m = env.num_channels();
    let mut order: Vec<usize> = (0..n).collect();
    let cost: Vec<f64> = (0..n).map(|d| env.costs()[d].aoi_cost(state.tau[d])).collect();
    order.sort_by(|&x, &y| cost[y].total_cmp(&cost[x]).then(x.cmp(&y)));
    let mut a = vec![0; n];
    let mut used = vec![false; m];
    for &d in order.iter().take(m) {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..m).filter(|&c| !used[c]) {
            let p = env
                .channel()
                .drop_probability(d, c, state.h.get(d, c))
                .expect("state levels are valid");
            if best.is_none_or(|(_, bp)| p < bp) {
                best = Some((c, p));
            }
        }
        let (c, _) = best.expect("a free channel remains");
        used[c] = true;
        a[d] = c + 1;
    }
    ScheduleAction(a)
}

pub fn baseline_policy<R: Rng + ?Sized>(
    kind: BaselineKind,
    env: &SchedulingEnv,
    state: &SystemState,
    rng: &mut R,
) -> ScheduleAction {
    match kind {
        BaselineKind::RandomFeasible => random_feasible(env.num_devices(), env.num_channels(), rng),
        BaselineKind::GreedyAoi => greedy_aoi(env, state),
    }
}
