//! Exact tabular solution of small scheduling instances.
//!
//! States are enumerated with the AoI capped at the environment's `tau_max`.
//! Since channels are i.i.d. across slots, the expectation over the next
//! channel matrix is factored out: each sweep first averages `V` over `H`,
//! then only the `2^M` delivery outcomes of the scheduled devices remain.

use std::io::Write;

use rand::Rng;

use crate::env::{validate_action, ScheduleAction, SchedulingEnv, SystemState};
use crate::channel::ChannelMatrix;
use crate::error::{Error, Result};

/// Default cap on the number of enumerated states.
pub const DEFAULT_STATE_LIMIT: u128 = 5_000_000;
/// Tolerance for flagging a monotonicity violation.
pub const VIOLATION_EPS: f64 = 1e-9;
/// Value-iteration tolerance used together with [`VIOLATION_EPS`].
pub const VI_TOL: f64 = 1e-12;

/// All feasible schedules for `N` devices and `M` channels, in lexicographic
/// order of the assignment vector.
pub fn enumerate_actions(num_devices: usize, num_channels: usize) -> Result<Vec<ScheduleAction>> {
    if num_channels > num_devices {
        return Err(Error::invalid(format!(
            "cannot assign {num_channels} channels to {num_devices} devices"
        )));
    }
    fn assign(m: usize, num_channels: usize, current: &mut Vec<usize>, out: &mut Vec<ScheduleAction>) {
        if m > num_channels {
            out.push(ScheduleAction(current.clone()));
            return;
        }
        for n in 0..current.len() {
            if current[n] == 0 {
                current[n] = m;
                assign(m + 1, num_channels, current, out);
                current[n] = 0;
            }
        }
    }
    let mut out = Vec::new();
    assign(1, num_channels, &mut vec![0; num_devices], &mut out);
    out.sort();
    debug_assert!(out.iter().all(|a| validate_action(&a.0, num_devices, num_channels)));
    Ok(out)
}

/// Number of enumerated states `tau_max^N * levels^(N M)`.
pub fn state_count(num_devices: usize, num_channels: usize, tau_max: u32, levels: usize) -> u128 {
    let tau = (tau_max as u128).checked_pow(num_devices as u32);
    let h = (levels as u128).checked_pow((num_devices * num_channels) as u32);
    match (tau, h) {
        (Some(t), Some(h)) => t.saturating_mul(h),
        _ => u128::MAX,
    }
}

#[derive(Debug, Clone)]
pub struct TabularMdp {
    env: SchedulingEnv,
    gamma: f64,
    actions: Vec<ScheduleAction>,
    num_tau: usize,
    num_h: usize,
    /// `Pr(H)` by channel index.
    h_probs: Vec<f64>,
    /// `r(s)` by AoI index.
    rewards: Vec<f64>,
}

/// Optimal value tables and solver diagnostics.
#[derive(Debug, Clone)]
pub struct ValueTables {
    pub v: Vec<f64>,
    /// Row-major `[state][action]`.
    pub q: Vec<f64>,
    pub num_actions: usize,
    pub sweeps: usize,
    /// Sup-norm change of each sweep.
    pub deltas: Vec<f64>,
    /// True when the sweep change stalled at floating-point resolution
    /// before reaching the requested tolerance.
    pub hit_precision_floor: bool,
}

impl ValueTables {
    pub fn q(&self, state: usize, action: usize) -> f64 {
        self.q[state * self.num_actions + action]
    }

    pub fn q_row(&self, state: usize) -> &[f64] {
        &self.q[state * self.num_actions..(state + 1) * self.num_actions]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// `V(s'_AoI) > V(s)`.
    ValueAoi,
    /// `Q(s'_AoI, a) > Q(s, a)`.
    QAoi,
    /// `Q(s'_Ch, a) > Q(s, a)` with the perturbed link in use.
    QChannelUsed,
    /// `Q(s'_Ch, a) != Q(s, a)` with the perturbed link unused.
    QChannelUnused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub state: usize,
    pub perturbed: usize,
    pub action: Option<usize>,
    /// Size of the violation (how far past the tolerance the inequality fails).
    pub gap: f64,
}

impl TabularMdp {
    pub fn new(env: SchedulingEnv, gamma: f64) -> Result<Self> {
        Self::with_limit(env, gamma, DEFAULT_STATE_LIMIT)
    }

    pub fn with_limit(env: SchedulingEnv, gamma: f64, limit: u128) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1)"));
        }
        let (n, m, levels) = (env.num_devices(), env.num_channels(), env.levels());
        let size = state_count(n, m, env.tau_max(), levels);
        if size > limit {
            return Err(Error::Capacity {
                what: "state space",
                size,
                limit,
            });
        }
        let actions = enumerate_actions(n, m)?;
        let num_tau = (env.tau_max() as usize).pow(n as u32);
        let num_h = levels.pow((n * m) as u32);
        let mut mdp = Self {
            env,
            gamma,
            actions,
            num_tau,
            num_h,
            h_probs: Vec::with_capacity(num_h),
            rewards: Vec::with_capacity(num_tau),
        };
        for hi in 0..num_h {
            let h = mdp.channel_from_index(hi);
            mdp.h_probs.push(mdp.env.channel().matrix_probability(&h));
        }
        for ti in 0..num_tau {
            let s = SystemState {
                tau: mdp.tau_from_index(ti),
                h: mdp.channel_from_index(0),
            };
            mdp.rewards.push(mdp.env.reward(&s));
        }
        Ok(mdp)
    }

    pub fn env(&self) -> &SchedulingEnv {
        &self.env
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn actions(&self) -> &[ScheduleAction] {
        &self.actions
    }

    pub fn num_states(&self) -> usize {
        self.num_tau * self.num_h
    }

    fn tau_from_index(&self, mut idx: usize) -> Vec<u32> {
        let base = self.env.tau_max() as usize;
        let mut tau = vec![0; self.env.num_devices()];
        for t in tau.iter_mut().rev() {
            *t = (idx % base) as u32 + 1;
            idx /= base;
        }
        tau
    }

    fn tau_index(&self, tau: &[u32]) -> usize {
        let base = self.env.tau_max() as usize;
        tau.iter().fold(0, |acc, &t| acc * base + (t as usize - 1))
    }

    fn channel_from_index(&self, mut idx: usize) -> ChannelMatrix {
        let (n, m, levels) = (self.env.num_devices(), self.env.num_channels(), self.env.levels());
        let mut entries = vec![0u8; n * m];
        for e in entries.iter_mut().rev() {
            *e = (idx % levels) as u8 + 1;
            idx /= levels;
        }
        ChannelMatrix::new(n, m, levels, entries).expect("index in range")
    }

    fn channel_index(&self, h: &ChannelMatrix) -> usize {
        let levels = self.env.levels();
        h.entries().iter().fold(0, |acc, &e| acc * levels + (e as usize - 1))
    }

    /// State at lexicographic position `idx` (AoI vector first, then `H` row-major).
    pub fn state(&self, idx: usize) -> SystemState {
        SystemState {
            tau: self.tau_from_index(idx / self.num_h),
            h: self.channel_from_index(idx % self.num_h),
        }
    }

    pub fn index(&self, state: &SystemState) -> usize {
        self.tau_index(&state.tau) * self.num_h + self.channel_index(&state.h)
    }

    pub fn reward(&self, state: usize) -> f64 {
        self.rewards[state / self.num_h]
    }

    /// `sum_H Pr(H) V(tau, H)` for every AoI index.
    fn channel_average(&self, v: &[f64]) -> Vec<f64> {
        v.chunks(self.num_h)
            .map(|row| row.iter().zip(&self.h_probs).map(|(x, p)| x * p).sum())
            .collect()
    }

    /// `sum_{tau+} Pr(tau+ | tau, H, a) W(tau+)`.
    fn expected_next(&self, state: usize, action: &ScheduleAction, w: &[f64]) -> f64 {
        let s = self.state(state);
        let tau_max = self.env.tau_max();
        let failed: Vec<u32> = s.tau.iter().map(|&t| (t + 1).min(tau_max)).collect();
        let scheduled: Vec<(usize, f64)> = action
            .0
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(n, &c)| {
                let p = self
                    .env
                    .channel()
                    .drop_probability(n, c - 1, s.h.get(n, c - 1))
                    .expect("enumerated state");
                (n, p)
            })
            .collect();
        let mut total = 0.0;
        let mut next = failed.clone();
        for mask in 0..(1usize << scheduled.len()) {
            let mut pr = 1.0;
            for (bit, &(n, p)) in scheduled.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    pr *= 1.0 - p;
                    next[n] = 1;
                } else {
                    pr *= p;
                    next[n] = failed[n];
                }
            }
            if pr != 0.0 {
                total += pr * w[self.tau_index(&next)];
            }
        }
        total
    }

    /// `Q(s, a) = r(s) + gamma sum_{s+} Pr(s+ | s, a) V(s+)` for every pair.
    pub fn q_from_v(&self, v: &[f64]) -> Vec<f64> {
        let w = self.channel_average(v);
        let mut q = Vec::with_capacity(self.num_states() * self.actions.len());
        for s in 0..self.num_states() {
            let r = self.reward(s);
            for a in &self.actions {
                q.push(r + self.gamma * self.expected_next(s, a, &w));
            }
        }
        q
    }

    /// Value iteration until the sup-norm change is below
    /// `tol (1 - gamma) / gamma`, which bounds the error of `V` by `tol`.
    pub fn value_iteration(&self, tol: f64, max_sweeps: usize) -> Result<ValueTables> {
        if !(tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        let threshold = tol * (1.0 - self.gamma) / self.gamma;
        let mut v = vec![0.0; self.num_states()];
        let mut deltas = Vec::new();
        let mut floor_hits = 0;
        for sweep in 1..=max_sweeps {
            let w = self.channel_average(&v);
            let next: Vec<f64> = (0..self.num_states())
                .map(|s| {
                    let best = self
                        .actions
                        .iter()
                        .map(|a| self.expected_next(s, a, &w))
                        .fold(f64::NEG_INFINITY, f64::max);
                    self.reward(s) + self.gamma * best
                })
                .collect();
            let delta = v
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let scale = next.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            v = next;
            deltas.push(delta);
            // the sweep change cannot shrink below a few ulps of |V|
            if delta >= threshold && delta <= 8.0 * f64::EPSILON * scale {
                floor_hits += 1;
            }
            if delta < threshold || floor_hits >= 3 {
                let q = self.q_from_v(&v);
                return Ok(ValueTables {
                    v,
                    q,
                    num_actions: self.actions.len(),
                    sweeps: sweep,
                    deltas,
                    hit_precision_floor: delta >= threshold,
                });
            }
        }
        Err(Error::Convergence {
            what: "value iteration",
            iterations: max_sweeps,
            last_change: deltas.last().copied().unwrap_or(f64::INFINITY),
        })
    }

    /// `max_s |max_a Q(s, a) - V(s)|`.
    pub fn bellman_residual(&self, tables: &ValueTables) -> f64 {
        (0..self.num_states())
            .map(|s| {
                let best = tables.q_row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (best - tables.v[s]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Index of the best action, lowest index on ties.
    pub fn greedy_action_index(&self, tables: &ValueTables, state: usize) -> usize {
        let row = tables.q_row(state);
        let mut best = 0;
        for (i, &q) in row.iter().enumerate() {
            if q > row[best] {
                best = i;
            }
        }
        best
    }

    pub fn greedy_action(&self, tables: &ValueTables, state: &SystemState) -> ScheduleAction {
        self.actions[self.greedy_action_index(tables, self.index(state))].clone()
    }

    /// Expected optimal value of a freshly reset system, `E_H V(1, ..., 1, H)`.
    pub fn initial_value(&self, tables: &ValueTables) -> f64 {
        let fresh = self.tau_index(&vec![1; self.env.num_devices()]);
        self.channel_average(&tables.v)[fresh]
    }

    /// Checks `V` and `Q` are non-increasing in every device's AoI.
    pub fn check_aoi_monotonicity(&self, tables: &ValueTables, eps: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        let tau_max = self.env.tau_max();
        for s in 0..self.num_states() {
            let state = self.state(s);
            for n in 0..self.env.num_devices() {
                for worse in state.tau[n] + 1..=tau_max {
                    let mut other = state.clone();
                    other.tau[n] = worse;
                    let s2 = self.index(&other);
                    let gap = tables.v[s2] - tables.v[s];
                    if gap > eps {
                        out.push(Violation {
                            kind: ViolationKind::ValueAoi,
                            state: s,
                            perturbed: s2,
                            action: None,
                            gap,
                        });
                    }
                    for a in 0..self.actions.len() {
                        let gap = tables.q(s2, a) - tables.q(s, a);
                        if gap > eps {
                            out.push(Violation {
                                kind: ViolationKind::QAoi,
                                state: s,
                                perturbed: s2,
                                action: Some(a),
                                gap,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Checks `Q` is non-increasing in the level of a used link and
    /// unchanged by the level of an unused link.
    pub fn check_channel_monotonicity(&self, tables: &ValueTables, eps: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        let (n_dev, n_ch, levels) = (self.env.num_devices(), self.env.num_channels(), self.env.levels());
        for s in 0..self.num_states() {
            let state = self.state(s);
            for n in 0..n_dev {
                for m in 0..n_ch {
                    for worse in state.h.get(n, m) + 1..=levels as u8 {
                        let mut other = state.clone();
                        other.h.set(n, m, worse).expect("level in range");
                        let s2 = self.index(&other);
                        for (ai, a) in self.actions.iter().enumerate() {
                            let diff = tables.q(s2, ai) - tables.q(s, ai);
                            let (kind, gap) = if a.0[n] == m + 1 {
                                (ViolationKind::QChannelUsed, diff)
                            } else {
                                (ViolationKind::QChannelUnused, diff.abs())
                            };
                            if gap > eps {
                                out.push(Violation {
                                    kind,
                                    state: s,
                                    perturbed: s2,
                                    action: Some(ai),
                                    gap,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Writes `state_index, tau..., h..., V, Q(a_0), ...` rows.
    pub fn write_tables_csv<W: Write>(&self, tables: &ValueTables, mut out: W) -> Result<()> {
        let n = self.env.num_devices();
        let links = n * self.env.num_channels();
        let mut header = vec!["state".to_string()];
        header.extend((0..n).map(|i| format!("tau{i}")));
        header.extend((0..links).map(|i| format!("h{i}")));
        header.push("v".into());
        header.extend(self.actions.iter().map(|a| {
            let ids: Vec<String> = a.0.iter().map(|c| c.to_string()).collect();
            format!("q[{}]", ids.join(" "))
        }));
        writeln!(out, "{}", header.join(","))?;
        for s in 0..self.num_states() {
            let st = self.state(s);
            let mut row = vec![s.to_string()];
            row.extend(st.tau.iter().map(|t| t.to_string()));
            row.extend(st.h.entries().iter().map(|h| h.to_string()));
            row.push(tables.v[s].to_string());
            row.extend(tables.q_row(s).iter().map(|q| q.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Monte Carlo estimate of a policy's performance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyEvaluation {
    pub mean_discounted_return: f64,
    /// Standard error of `mean_discounted_return`.
    pub std_error: f64,
    /// Time-average of `sum_n g_n(tau_n)` over all simulated steps.
    pub mean_sum_cost: f64,
}

/// Rolls `policy` out from fresh resets for `episodes` episodes of `horizon`
/// steps each; the return of an episode is `sum_t gamma^t r(s_t)`.
pub fn evaluate_policy<R, P>(
    mut policy: P,
    env: &SchedulingEnv,
    rng: &mut R,
    episodes: usize,
    horizon: usize,
    gamma: f64,
) -> Result<PolicyEvaluation>
where
    R: Rng + ?Sized,
    P: FnMut(&SystemState) -> ScheduleAction,
{
    if horizon == 0 || episodes == 0 {
        return Err(Error::invalid("episodes and horizon must be >= 1"));
    }
    let mut returns = Vec::with_capacity(episodes);
    let mut cost_total = 0.0;
    for _ in 0..episodes {
        let mut state = env.reset(rng);
        let mut discount = 1.0;
        let mut ret = 0.0;
        for _ in 0..horizon {
            let action = policy(&state);
            let out = env.step(&state, &action, rng)?;
            ret += discount * out.reward;
            cost_total -= out.reward;
            discount *= gamma;
            state = out.next_state;
        }
        returns.push(ret);
    }
    let k = episodes as f64;
    let mean = returns.iter().sum::<f64>() / k;
    let var = if episodes > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Ok(PolicyEvaluation {
        mean_discounted_return: mean,
        std_error: (var / k).sqrt(),
        mean_sum_cost: cost_total / (k * horizon as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelModel;
    use crate::estimation::CostModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_costs(n: usize, tau_max: u32) -> Vec<CostModel> {
        (0..n)
            .map(|k| {
                CostModel::from_table((1..=tau_max).map(|t| (t as f64) * (1.0 + 0.5 * k as f64)).collect())
                    .unwrap()
            })
            .collect()
    }

    fn instance(n: usize, m: usize, drop: Vec<f64>, q: &[f64], tau_max: u32) -> TabularMdp {
        let ch = ChannelModel::uniform_links(n, m, q, drop).unwrap();
        let env = SchedulingEnv::new(ch, linear_costs(n, tau_max), tau_max).unwrap();
        TabularMdp::new(env, 0.9).unwrap()
    }

    #[test]
    fn action_enumeration() {
        let a = enumerate_actions(2, 1).unwrap();
        assert_eq!(a, vec![ScheduleAction(vec![0, 1]), ScheduleAction(vec![1, 0])]);
        let a = enumerate_actions(3, 2).unwrap();
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|x| validate_action(&x.0, 3, 2)));
        assert_eq!(enumerate_actions(5, 3).unwrap().len(), 5 * 4 * 3);
        assert!(enumerate_actions(1, 2).is_err());
    }

    #[test]
    fn state_enumeration_counts_and_bijection() {
        let mdp = instance(1, 1, vec![0.1, 0.2], &[0.5, 0.5], 3);
        assert_eq!(mdp.num_states(), 6);
        let mdp = instance(2, 1, vec![0.1, 0.2], &[0.5, 0.5], 4);
        // 4^2 AoI vectors times 2^2 channel matrices
        assert_eq!(mdp.num_states(), 64);
        for i in 0..mdp.num_states() {
            assert_eq!(mdp.index(&mdp.state(i)), i);
        }
        // lexicographic: first state is all-fresh, all-best
        assert_eq!(mdp.state(0).tau, vec![1, 1]);
        assert_eq!(mdp.state(1).h.entries(), &[1, 2]);
    }

    #[test]
    fn capacity_limit() {
        let ch = ChannelModel::uniform_links(2, 1, &[0.5, 0.5], vec![0.1, 0.2]).unwrap();
        let env = SchedulingEnv::new(ch, linear_costs(2, 6), 6).unwrap();
        match TabularMdp::with_limit(env, 0.9, 100) {
            Err(Error::Capacity { size, .. }) => assert_eq!(size, 144),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_state_geometric_series() {
        // tau_max = 1 and one level: a single state with reward -c
        let ch = ChannelModel::uniform_links(1, 1, &[1.0], vec![0.3]).unwrap();
        let env = SchedulingEnv::new(ch, vec![CostModel::from_table(vec![2.5]).unwrap()], 1).unwrap();
        let mdp = TabularMdp::new(env, 0.8).unwrap();
        assert_eq!(mdp.num_states(), 1);
        let t = mdp.value_iteration(1e-12, 10_000).unwrap();
        assert!((t.v[0] + 2.5 / 0.2).abs() < 1e-10);
    }

    #[test]
    fn perfect_channel_always_transmit() {
        let ch = ChannelModel::uniform_links(1, 1, &[0.5, 0.5], vec![0.0, 0.0]).unwrap();
        let env = SchedulingEnv::new(ch, linear_costs(1, 5), 5).unwrap();
        let mdp = TabularMdp::new(env, 0.9).unwrap();
        let t = mdp.value_iteration(1e-12, 10_000).unwrap();
        let expected = -1.0 / (1.0 - 0.9);
        assert!((mdp.initial_value(&t) - expected).abs() < 1e-9);
        // from tau = 3 the cost is 3 once, then 1 forever
        let s = mdp.index(&SystemState::new(vec![3], mdp.state(0).h).unwrap());
        assert!((t.v[s] - (-3.0 + 0.9 * expected)).abs() < 1e-9);
    }

    #[test]
    fn residual_and_fixed_point() {
        let mdp = instance(2, 1, vec![0.1, 0.4], &[0.6, 0.4], 5);
        let t = mdp.value_iteration(1e-12, 100_000).unwrap();
        assert!(mdp.bellman_residual(&t) < 1e-9);
        assert!(t.v.iter().all(|&v| v <= 0.0));
        for k in 1..t.deltas.len() {
            assert!(t.deltas[k] <= 0.9 * t.deltas[k - 1] + 1e-12);
        }
    }

    #[test]
    fn always_failing_channel_makes_actions_irrelevant() {
        let mdp = instance(2, 1, vec![1.0, 1.0], &[0.5, 0.5], 4);
        let t = mdp.value_iteration(1e-12, 100_000).unwrap();
        for s in 0..mdp.num_states() {
            let row = t.q_row(s);
            assert!(row.iter().all(|&q| (q - row[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn theorems_hold_on_small_instances() {
        for (drop, q) in [
            (vec![0.1, 0.4], vec![0.5, 0.5]),
            (vec![0.0, 0.05, 0.6], vec![0.2, 0.5, 0.3]),
        ] {
            let mdp = instance(2, 1, drop, &q, 5);
            let t = mdp.value_iteration(VI_TOL, 100_000).unwrap();
            assert!(mdp.check_aoi_monotonicity(&t, VIOLATION_EPS).is_empty());
            assert!(mdp.check_channel_monotonicity(&t, VIOLATION_EPS).is_empty());
        }
        let mdp = instance(3, 2, vec![0.1, 0.5], &[0.5, 0.5], 3);
        let t = mdp.value_iteration(VI_TOL, 100_000).unwrap();
        assert!(mdp.check_aoi_monotonicity(&t, VIOLATION_EPS).is_empty());
        assert!(mdp.check_channel_monotonicity(&t, VIOLATION_EPS).is_empty());
    }

    #[test]
    fn detectors_flag_corrupted_tables() {
        let mdp = instance(2, 1, vec![0.1, 0.4], &[0.5, 0.5], 4);
        let mut t = mdp.value_iteration(VI_TOL, 100_000).unwrap();
        let worse = mdp.index(&SystemState::new(vec![3, 1], mdp.state(0).h).unwrap());
        t.q[worse * t.num_actions] = 0.0;
        t.v[worse] = 0.0;
        let v = mdp.check_aoi_monotonicity(&t, VIOLATION_EPS);
        assert!(v.iter().any(|x| x.kind == ViolationKind::QAoi));
        assert!(v.iter().any(|x| x.kind == ViolationKind::ValueAoi));
        assert!(!mdp.check_channel_monotonicity(&t, VIOLATION_EPS).is_empty());
    }

    #[test]
    fn decreasing_drop_probabilities_break_channel_monotonicity() {
        let ch = ChannelModel::new_unchecked_drop(2, 1, &[0.5, 0.5], vec![0.6, 0.05]).unwrap();
        let env = SchedulingEnv::new(ch, linear_costs(2, 5), 5).unwrap();
        let mdp = TabularMdp::new(env, 0.9).unwrap();
        let t = mdp.value_iteration(VI_TOL, 100_000).unwrap();
        let v = mdp.check_channel_monotonicity(&t, VIOLATION_EPS);
        assert!(v.iter().any(|x| x.kind == ViolationKind::QChannelUsed));
        assert!(v.iter().all(|x| x.kind != ViolationKind::QChannelUnused));
    }

    #[test]
    fn greedy_policy_invariant_to_reward_shift() {
        let mdp = instance(2, 1, vec![0.1, 0.4], &[0.5, 0.5], 4);
        let t = mdp.value_iteration(VI_TOL, 100_000).unwrap();
        let mut shifted = mdp.clone();
        for r in shifted.rewards.iter_mut() {
            *r -= 7.0;
        }
        let t2 = shifted.value_iteration(VI_TOL, 100_000).unwrap();
        for s in 0..mdp.num_states() {
            assert_eq!(mdp.greedy_action_index(&t, s), shifted.greedy_action_index(&t2, s));
        }
    }

    #[test]
    fn greedy_rollout_matches_optimal_value() {
        let mdp = instance(2, 1, vec![0.1, 0.4], &[0.5, 0.5], 5);
        let t = mdp.value_iteration(VI_TOL, 100_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eval = evaluate_policy(|s| mdp.greedy_action(&t, s), mdp.env(), &mut rng, 4000, 200, 0.9).unwrap();
        let target = mdp.initial_value(&t);
        assert!(
            (eval.mean_discounted_return - target).abs() < 3.0 * eval.std_error + 1e-6,
            "{} vs {target} (se {})",
            eval.mean_discounted_return,
            eval.std_error
        );
    }

    #[test]
    fn idle_policy_cost_is_deterministic() {
        let ch = ChannelModel::uniform_links(1, 1, &[0.5, 0.5], vec![0.1, 0.2]).unwrap();
        let env = SchedulingEnv::new(ch, linear_costs(1, 10), 10).unwrap();
        // with one device and one channel the device is always scheduled, so
        // make delivery impossible to get the never-delivered trajectory
        let ch_dead = ChannelModel::uniform_links(1, 1, &[0.5, 0.5], vec![1.0, 1.0]).unwrap();
        let dead = SchedulingEnv::new(ch_dead, env.costs().to_vec(), 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let eval = evaluate_policy(|_| ScheduleAction(vec![1]), &dead, &mut rng, 3, 4, 0.9).unwrap();
        assert!((eval.mean_sum_cost - (1.0 + 2.0 + 3.0 + 4.0) / 4.0).abs() < 1e-12);
        assert_eq!(eval.std_error, 0.0);
    }

    #[test]
    fn independent_seeds_agree_statistically() {
        let mdp = instance(2, 1, vec![0.1, 0.4], &[0.5, 0.5], 5);
        let t = mdp.value_iteration(VI_TOL, 100_000).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            evaluate_policy(|s| mdp.greedy_action(&t, s), mdp.env(), &mut rng, 2000, 150, 0.9).unwrap()
        };
        let (a, b) = (run(1), run(2));
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.mean_discounted_return - b.mean_discounted_return).abs() < 3.0 * se);
    }

    #[test]
    fn tables_csv_has_one_row_per_state() {
        let mdp = instance(1, 1, vec![0.1, 0.2], &[0.5, 0.5], 3);
        let t = mdp.value_iteration(VI_TOL, 10_000).unwrap();
        let mut buf = Vec::new();
        mdp.write_tables_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(text.starts_with("state,tau0,h0,v,q[1]"));
    }
}
