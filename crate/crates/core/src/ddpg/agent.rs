use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::action::{encode_action, project_action};
use super::penalty::{effective_set, increment_candidates, sample_penalty_indices, StateCoding};
use super::replay::{ReplayBuffer, Transition};
use super::{TdTargetMode, TrainConfig, Variant};
use crate::env::{ScheduleAction, SchedulingEnv, SystemState};
use crate::error::{Error, Result};
use crate::exact::enumerate_actions;
use crate::neural::checkpoint::{read_critic, read_mlp, write_critic, write_mlp, Reader};
use crate::neural::{soft_update, Activation, Adam, Critic, Gradients, Matrix, Mlp, MonotoneCritic, Parameterized};

/// Largest number of feasible schedules the exact-max TD target will
/// enumerate per next state.
pub const EXACT_MAX_ACTION_LIMIT: usize = 720;

const INIT_STREAM: u64 = 0;
const EXPLORE_STREAM: u64 = 1;
const REPLAY_STREAM: u64 = 2;
const PENALTY_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Number of feasible schedules, `N! / (N - M)!`, saturating.
fn action_count(num_devices: usize, num_channels: usize) -> u128 {
    (0..num_channels).fold(1u128, |acc, k| acc.saturating_mul((num_devices - k) as u128))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CriticStats {
    /// `td_loss + penalty_weight * penalty`.
    pub loss: f64,
    /// Mean squared TD error.
    pub td_loss: f64,
    /// Mean per-transition penalty, unweighted.
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    variant: Variant,
    coding: StateCoding,
    actor: Mlp,
    critic: Critic,
    target_actor: Mlp,
    target_critic: Critic,
    actor_opt: Adam,
    critic_opt: Adam,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    penalty_rng: ChaCha8Rng,
    /// Every feasible schedule, encoded one per row, when few enough exist.
    feasible: Option<Matrix>,
    hull_projection: bool,
}

impl Agent {
    /// Fresh networks for `env`. Initialisation, exploration noise, replay
    /// sampling and penalty sampling draw from separate streams of `seed`.
    pub fn new(env: &SchedulingEnv, config: &TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let coding = StateCoding {
            num_devices: env.num_devices(),
            num_channels: env.num_channels(),
            tau_max: env.tau_max(),
            levels: env.levels(),
        };
        let mut init = stream(seed, INIT_STREAM);
        let (sd, n) = (coding.dim(), coding.num_devices);
        let mut dims = vec![sd];
        dims.extend_from_slice(&config.actor_hidden);
        dims.push(n);
        let actor = Mlp::new(&dims, Activation::Relu, Activation::Sigmoid, &mut init)?;
        let critic = match config.variant {
            Variant::Ma => Critic::Monotone(MonotoneCritic::new(
                sd,
                n,
                config.monotone_state_hidden,
                config.monotone_action_hidden,
                &mut init,
            )?),
            _ => Critic::plain(sd, n, &config.critic_hidden, &mut init)?,
        };
        let mut agent = Self::assemble(config.variant, coding, actor, critic, seed)?;
        agent.hull_projection = config.hull_projection;
        if config.td_target == TdTargetMode::ExactMax && agent.feasible.is_none() {
            return Err(Error::Capacity {
                what: "feasible schedule set",
                size: action_count(coding.num_devices, coding.num_channels),
                limit: EXACT_MAX_ACTION_LIMIT as u128,
            });
        }
        Ok(agent)
    }

    fn assemble(variant: Variant, coding: StateCoding, actor: Mlp, critic: Critic, seed: u64) -> Result<Self> {
        let feasible = if action_count(coding.num_devices, coding.num_channels) <= EXACT_MAX_ACTION_LIMIT as u128 {
            let rows: Vec<Vec<f64>> = enumerate_actions(coding.num_devices, coding.num_channels)?
                .iter()
                .map(|a| encode_action(a, coding.num_channels))
                .collect();
            Some(Matrix::from_rows(coding.num_devices, rows.iter().map(|r| r.as_slice()))?)
        } else {
            None
        };
        Ok(Self {
            variant,
            coding,
            actor_opt: Adam::new(&actor),
            critic_opt: Adam::new(&critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            explore_rng: stream(seed, EXPLORE_STREAM),
            replay_rng: stream(seed, REPLAY_STREAM),
            penalty_rng: stream(seed, PENALTY_STREAM),
            feasible,
            hull_projection: true,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn coding(&self) -> &StateCoding {
        &self.coding
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Critic {
        &mut self.critic
    }

    pub fn target_actor(&self) -> &Mlp {
        &self.target_actor
    }

    pub fn target_critic(&self) -> &Critic {
        &self.target_critic
    }

    pub fn is_finite(&self) -> bool {
        self.actor.all_finite()
            && self.critic.all_finite()
            && self.target_actor.all_finite()
            && self.target_critic.all_finite()
    }

    pub fn check_env(&self, env: &SchedulingEnv) -> Result<()> {
        let c = &self.coding;
        if env.num_devices() != c.num_devices
            || env.num_channels() != c.num_channels
            || env.tau_max() != c.tau_max
            || env.levels() != c.levels
        {
            return Err(Error::invalid("agent and environment dimensions differ"));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.coding.num_channels as f64
    }

    /// Noise-free actor output in `[0, M]^N`.
    pub fn actor_raw(&self, s: &[f64]) -> Vec<f64> {
        let m = self.scale();
        self.actor
            .predict(s)
            .expect("state matches actor input")
            .into_iter()
            .map(|u| u * m)
            .collect()
    }

    /// Actor output plus Gaussian noise of standard deviation `sigma`,
    /// clipped to `[0, M]`.
    pub fn select_action(&mut self, s: &[f64], sigma: f64) -> Vec<f64> {
        let m = self.scale();
        let mut raw = self.actor_raw(s);
        if sigma > 0.0 {
            for x in raw.iter_mut() {
                let z: f64 = self.explore_rng.sample(StandardNormal);
                *x = (*x + sigma * z).clamp(0.0, m);
            }
        }
        raw
    }

    /// Schedule chosen without exploration.
    pub fn greedy_action(&self, state: &SystemState) -> ScheduleAction {
        let s = crate::env::encode_state(state, self.coding.tau_max);
        project_action(&self.actor_raw(&s), self.coding.num_channels)
    }

    pub fn sample_batch<'a>(&mut self, replay: &'a ReplayBuffer, batch: usize) -> Result<Vec<&'a Transition>> {
        replay.sample(batch, &mut self.replay_rng)
    }

    fn batch_matrices(&self, batch: &[&Transition]) -> Result<(Matrix, Matrix, Matrix)> {
        let sd = self.coding.dim();
        let s = Matrix::from_rows(sd, batch.iter().map(|t| t.state.as_slice()))?;
        let s_next = Matrix::from_rows(sd, batch.iter().map(|t| t.next_state.as_slice()))?;
        let enc: Vec<Vec<f64>> = batch
            .iter()
            .map(|t| encode_action(&t.action, self.coding.num_channels))
            .collect();
        let a = Matrix::from_rows(self.coding.num_devices, enc.iter().map(|r| r.as_slice()))?;
        Ok((s, a, s_next))
    }

    /// Bootstrap values `max`/target-actor `Q_target(s_next, .)` per row.
    fn bootstrap(&self, s_next: &Matrix, mode: TdTargetMode) -> Result<Vec<f64>> {
        let (n, m) = (self.coding.num_devices, self.coding.num_channels);
        match mode {
            TdTargetMode::TargetActor => {
                let u = self.target_actor.forward(s_next)?;
                let out = u.output();
                let mut a = Matrix::zeros(out.rows, n);
                for r in 0..out.rows {
                    let raw: Vec<f64> = out.row(r).iter().map(|x| x * m as f64).collect();
                    a.row_mut(r).copy_from_slice(&encode_action(&project_action(&raw, m), m));
                }
                self.target_critic.q_values(s_next, &a)
            }
            TdTargetMode::ExactMax => {
                let all = self.feasible.as_ref().ok_or(Error::Capacity {
                    what: "feasible schedule set",
                    size: action_count(n, m),
                    limit: EXACT_MAX_ACTION_LIMIT as u128,
                })?;
                let k = all.rows;
                let mut s_rep = Matrix::zeros(s_next.rows * k, s_next.cols);
                let mut a_rep = Matrix::zeros(s_next.rows * k, n);
                for r in 0..s_next.rows {
                    for j in 0..k {
                        s_rep.row_mut(r * k + j).copy_from_slice(s_next.row(r));
                        a_rep.row_mut(r * k + j).copy_from_slice(all.row(j));
                    }
                }
                let q = self.target_critic.q_values(&s_rep, &a_rep)?;
                Ok(q.chunks(k)
                    .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .collect())
            }
        }
    }

    /// `y_i = scale * r_i + gamma * Q_target(s_next_i, .)`; no terminal masking.
    pub fn td_targets(&self, batch: &[&Transition], mode: TdTargetMode, gamma: f64, reward_scale: f64) -> Result<Vec<f64>> {
        let sd = self.coding.dim();
        let s_next = Matrix::from_rows(sd, batch.iter().map(|t| t.next_state.as_slice()))?;
        let boot = self.bootstrap(&s_next, mode)?;
        Ok(batch
            .iter()
            .zip(boot)
            .map(|(t, q)| reward_scale * t.reward + gamma * q)
            .collect())
    }

    pub fn td_target(&self, t: &Transition, mode: TdTargetMode, gamma: f64, reward_scale: f64) -> Result<f64> {
        Ok(self.td_targets(&[t], mode, gamma, reward_scale)?[0])
    }

    /// Penalty coordinates per transition: sampled from the effective set
    /// for the derivative penalty, from the incrementable part of it for the
    /// increment penalty, and empty otherwise.
    pub fn penalty_plan(&mut self, batch: &[&Transition], k: usize) -> Vec<Vec<usize>> {
        batch
            .iter()
            .map(|t| match self.variant {
                Variant::Mri => sample_penalty_indices(&effective_set(&t.action, &self.coding), k, &mut self.penalty_rng),
                Variant::Mrii => sample_penalty_indices(
                    &increment_candidates(&t.raw_state, &t.action, &self.coding),
                    k,
                    &mut self.penalty_rng,
                ),
                Variant::Baseline | Variant::Ma => Vec::new(),
            })
            .collect()
    }

    /// Critic loss `mean_i [ (Q_i - y_i)^2 + weight * penalty_i ]` and its
    /// parameter gradient for fixed targets and penalty coordinates.
    pub fn critic_loss_and_grad(
        &self,
        batch: &[&Transition],
        targets: &[f64],
        plan: &[Vec<usize>],
        weight: f64,
    ) -> Result<(CriticStats, Gradients)> {
        let b = batch.len();
        if b == 0 || targets.len() != b || plan.len() != b {
            return Err(Error::invalid("batch, targets and plan must have equal non-zero length"));
        }
        let bf = b as f64;
        let (mut s, mut a, _) = self.batch_matrices(batch)?;
        let sd = self.coding.dim();

        // Increment rows (base row, perturbed row) appended after the batch.
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        if self.variant == Variant::Mrii {
            let mut extra_s = Vec::new();
            let mut extra_a = Vec::new();
            for (i, idx) in plan.iter().enumerate() {
                for &j in idx {
                    extra_s.extend(self.coding.incremented(s.row(i), j));
                    extra_a.extend_from_slice(a.row(i));
                    pairs.push((i, b + pairs.len()));
                }
            }
            if !pairs.is_empty() {
                s.data.extend(extra_s);
                s.rows += pairs.len();
                a.data.extend(extra_a);
                a.rows += pairs.len();
            }
        }

        let cache = self.critic.forward(&s, &a)?;
        let q = cache.q_values();
        let mut dq = vec![0.0; q.len()];
        let mut td_loss = 0.0;
        for i in 0..b {
            let e = q[i] - targets[i];
            td_loss += e * e;
            dq[i] = 2.0 * e / bf;
        }
        td_loss /= bf;
        let mut penalty = 0.0;
        for &(i, r) in &pairs {
            let diff = q[r] - q[i];
            if diff > 0.0 {
                penalty += diff;
                dq[r] += weight / bf;
                dq[i] -= weight / bf;
            }
        }
        let (mut grads, _, _) = self.critic.backward(&cache, &dq);

        if self.variant == Variant::Mri {
            let mut rows_s = Vec::new();
            let mut rows_a = Vec::new();
            let mut dirs = Vec::new();
            for (i, idx) in plan.iter().enumerate() {
                for &j in idx {
                    rows_s.extend_from_slice(s.row(i));
                    rows_a.extend_from_slice(a.row(i));
                    let mut e = vec![0.0; sd];
                    e[j] = 1.0;
                    dirs.extend(e);
                }
            }
            if !dirs.is_empty() {
                let rows = dirs.len() / sd;
                let ts = Matrix::new(rows, sd, rows_s)?;
                let ta = Matrix::new(rows, a.cols, rows_a)?;
                let td = Matrix::new(rows, sd, dirs)?;
                let tangent = self.critic.state_tangent(&ts, &ta, &td)?;
                let mut weights = Vec::with_capacity(rows);
                for &d in tangent.derivatives() {
                    if d > 0.0 {
                        penalty += d;
                        weights.push(weight / bf);
                    } else {
                        weights.push(0.0);
                    }
                }
                grads.add_scaled(&self.critic.state_tangent_backward(&tangent, &weights), 1.0);
            }
        }
        penalty /= bf;
        Ok((
            CriticStats {
                loss: td_loss + weight * penalty,
                td_loss,
                penalty,
            },
            grads,
        ))
    }

    /// One optimiser step on the critic, followed by the sign projection for
    /// the monotone variant. Returns the loss before the step.
    pub fn critic_update(
        &mut self,
        batch: &[&Transition],
        config: &TrainConfig,
        reward_scale: f64,
        lr: f64,
    ) -> Result<CriticStats> {
        let targets = self.td_targets(batch, config.td_target, config.gamma, reward_scale)?;
        let plan = self.penalty_plan(batch, config.penalty_samples);
        let (stats, grads) = self.critic_loss_and_grad(batch, &targets, &plan, config.penalty_weight)?;
        self.critic_opt.step(&mut self.critic, &grads, lr);
        self.critic.project();
        Ok(stats)
    }

    /// Loss `-mean_i Q(s_i, actor(s_i))` and its gradient with respect to
    /// the actor parameters.
    ///
    /// With hull projection on, the critic is queried at the orthogonal
    /// projection of each actor output onto the hyperplane
    /// `sum_n a_n = (M + 1) / 2` that holds every encoded feasible schedule,
    /// so the gradient has no component the critic never saw data for.
    pub fn actor_loss_and_grad(&self, states: &Matrix) -> Result<(f64, Gradients)> {
        let critic = &self.critic;
        let hull = self.hull_projection.then(|| {
            let (n, m) = (self.coding.num_devices as f64, self.coding.num_channels as f64);
            (m + 1.0) / (2.0 * n)
        });
        policy_gradient(&self.actor, states, |s, u| {
            let mut a = u.clone();
            if let Some(level) = hull {
                for r in 0..a.rows {
                    let row = a.row_mut(r);
                    let shift = row.iter().sum::<f64>() / row.len() as f64 - level;
                    row.iter_mut().for_each(|x| *x -= shift);
                }
            }
            let cache = critic.forward(s, &a)?;
            let q = cache.q_values();
            let dq = vec![1.0; q.len()];
            let (_, _, mut da) = critic.backward(&cache, &dq);
            if hull.is_some() {
                for r in 0..da.rows {
                    let row = da.row_mut(r);
                    let mean = row.iter().sum::<f64>() / row.len() as f64;
                    row.iter_mut().for_each(|x| *x -= mean);
                }
            }
            Ok((q, da))
        })
    }

    /// One deterministic-policy-gradient step on the actor. The critic sees
    /// the continuous output `raw / M` directly; projection is bypassed.
    pub fn actor_update(&mut self, batch: &[&Transition], lr: f64) -> Result<f64> {
        let sd = self.coding.dim();
        let s = Matrix::from_rows(sd, batch.iter().map(|t| t.state.as_slice()))?;
        let (loss, grads) = self.actor_loss_and_grad(&s)?;
        self.actor_opt.step(&mut self.actor, &grads, lr);
        Ok(loss)
    }

    pub fn soft_update_targets(&mut self, delta: f64) {
        soft_update(&mut self.target_actor, &self.actor, delta);
        soft_update(&mut self.target_critic, &self.critic, delta);
        self.target_critic.project();
    }

    /// Networks as text; optimiser moments and random streams are not saved.
    pub fn to_checkpoint(&self) -> String {
        let c = &self.coding;
        let mut out = format!(
            "agent\nvariant {}\ncoding {} {} {} {}\n",
            self.variant, c.num_devices, c.num_channels, c.tau_max, c.levels
        );
        write_mlp(&self.actor, &mut out);
        write_critic(&self.critic, &mut out);
        write_mlp(&self.target_actor, &mut out);
        write_critic(&self.target_critic, &mut out);
        out
    }

    /// Rebuilds an agent from [`Agent::to_checkpoint`] output with fresh
    /// optimiser state and random streams seeded by `seed`.
    pub fn from_checkpoint(text: &str, seed: u64) -> Result<Self> {
        let mut r = Reader::new(text);
        r.expect("agent")?;
        let words = r.expect("variant")?;
        let variant: Variant = words
            .first()
            .ok_or_else(|| r.error("missing variant"))?
            .parse()
            .map_err(|e: Error| r.error(e))?;
        let words = r.expect("coding")?;
        if words.len() != 4 {
            return Err(r.error("`coding` takes N, M, tau_max, levels"));
        }
        let coding = StateCoding {
            num_devices: r.parse_usize(words[0])?,
            num_channels: r.parse_usize(words[1])?,
            tau_max: r.parse_usize(words[2])? as u32,
            levels: r.parse_usize(words[3])?,
        };
        if coding.num_channels == 0 || coding.num_channels > coding.num_devices || coding.tau_max == 0 || coding.levels == 0 {
            return Err(r.error("inconsistent coding"));
        }
        let actor = read_mlp(&mut r)?;
        let critic = read_critic(&mut r)?;
        let target_actor = read_mlp(&mut r)?;
        let target_critic = read_critic(&mut r)?;
        let (sd, n) = (coding.dim(), coding.num_devices);
        let shapes_ok = actor.input_dim() == sd
            && actor.output_dim() == n
            && critic.state_dim() == sd
            && critic.action_dim() == n
            && target_actor.dims() == actor.dims()
            && target_critic.state_dim() == sd
            && target_critic.action_dim() == n
            && critic.is_monotone() == (variant == Variant::Ma)
            && target_critic.is_monotone() == critic.is_monotone();
        if !shapes_ok {
            return Err(Error::Checkpoint("network shapes do not match the coding".into()));
        }
        let mut agent = Self::assemble(variant, coding, actor, critic, seed)?;
        agent.target_actor = target_actor;
        agent.target_critic = target_critic;
        Ok(agent)
    }
}

/// Shared deterministic-policy-gradient core. `q_and_grad(s, u)` returns
/// `Q` per row and `dQ/du` for actor outputs `u`.
pub(crate) fn policy_gradient<F>(actor: &Mlp, states: &Matrix, q_and_grad: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&Matrix, &Matrix) -> Result<(Vec<f64>, Matrix)>,
{
    let cache = actor.forward(states)?;
    let (q, mut dq_du) = q_and_grad(states, cache.output())?;
    let bf = states.rows as f64;
    let loss = -q.iter().sum::<f64>() / bf;
    for x in dq_du.data.iter_mut() {
        *x = -*x / bf;
    }
    let (grads, _) = actor.backward(&cache, &dq_du);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests;
