use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{component_rng, component_seed, ExperimentConfig, SeedStream};
use super::policy::{baseline_policy, BaselineKind};
use super::system::{generate_system, GeneratedSystem};
use crate::ddpg::{train, Agent, EpisodeMetrics, TrainSink, Variant};
use crate::env::{ScheduleAction, SchedulingEnv, SystemState};
use crate::error::{Error, Result};

/// Trailing window of the moving average used for convergence.
pub const NEC_WINDOW: usize = 10;
/// Episodes averaged for the final cost.
pub const FINAL_WINDOW: usize = 50;
/// Relative half-width of the converged band.
pub const NEC_BAND: f64 = 0.05;

pub const METRICS_HEADER: &str = "run_id,variant,episode,avg_sum_cost,critic_loss,actor_loss,penalty,updates";
pub const TIMING_HEADER: &str = "run_id,variant,episode,wall_seconds";
pub const SUMMARY_HEADER: &str = "run_id,policy,seed,nec,final_avg_cost,eval_avg_cost,eval_discounted_return";

/// Mean of the last `FINAL_WINDOW` entries (all of them if fewer).
pub fn final_average(curve: &[f64]) -> Option<f64> {
    if curve.is_empty() {
        return None;
    }
    let tail = &curve[curve.len().saturating_sub(FINAL_WINDOW)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Episodes needed to converge: `e + 1` for the first episode `e` whose
/// trailing `NEC_WINDOW`-episode average lies within `NEC_BAND` of the final
/// average. `None` for curves shorter than the window.
pub fn nec(curve: &[f64]) -> Option<usize> {
    let fin = final_average(curve)?;
    if curve.len() < NEC_WINDOW {
        return None;
    }
    let mut sum: f64 = curve[..NEC_WINDOW - 1].iter().sum();
    for e in NEC_WINDOW - 1..curve.len() {
        sum += curve[e];
        let ma = sum / NEC_WINDOW as f64;
        if (ma - fin).abs() <= NEC_BAND * fin.abs() {
            return Some(e + 1);
        }
        sum -= curve[e + 1 - NEC_WINDOW];
    }
    None
}

/// Outcome of rolling a fixed policy out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Time-average of `sum_n g_n(tau_n)`.
    pub avg_sum_cost: f64,
    /// Mean over episodes of `sum_t gamma^t r_t`.
    pub discounted_return: f64,
}

/// Rolls `policy` out for `episodes x horizon` steps from fresh resets,
/// optionally writing one CSV line per step.
pub fn rollout<R, P>(
    env: &SchedulingEnv,
    mut policy: P,
    rng: &mut R,
    episodes: usize,
    horizon: usize,
    gamma: f64,
    mut trajectory: Option<&mut dyn Write>,
) -> Result<Evaluation>
where
    R: Rng + ?Sized,
    P: FnMut(&SystemState) -> ScheduleAction,
{
    if episodes == 0 || horizon == 0 {
        return Err(Error::invalid("episodes and horizon must be >= 1"));
    }
    if let Some(w) = trajectory.as_deref_mut() {
        writeln!(w, "{}", trajectory_header(env.num_devices(), env.num_channels()))?;
    }
    let (mut cost, mut ret) = (0.0, 0.0);
    for episode in 0..episodes {
        let mut state = env.reset(rng);
        let mut discount = 1.0;
        for step in 0..horizon {
            let action = policy(&state);
            let out = env.step(&state, &action, rng)?;
            if let Some(w) = trajectory.as_deref_mut() {
                writeln!(w, "{}", trajectory_line(episode, step, &state, &action, -out.reward))?;
            }
            cost -= out.reward;
            ret += discount * out.reward;
            discount *= gamma;
            state = out.next_state;
        }
    }
    Ok(Evaluation {
        avg_sum_cost: cost / (episodes * horizon) as f64,
        discounted_return: ret / episodes as f64,
    })
}

/// Columns: episode, step, `tau_n`, `h_n_m` (row-major), `action_n`, and
/// the step's `sum_n g_n(tau_n)`.
pub fn trajectory_header(num_devices: usize, num_channels: usize) -> String {
    let mut h = String::from("episode,step");
    for n in 1..=num_devices {
        write!(h, ",tau_{n}").expect("writing to a String");
    }
    for n in 1..=num_devices {
        for m in 1..=num_channels {
            write!(h, ",h_{n}_{m}").expect("writing to a String");
        }
    }
    for n in 1..=num_devices {
        write!(h, ",action_{n}").expect("writing to a String");
    }
    h.push_str(",sum_cost");
    h
}

fn trajectory_line(episode: usize, step: usize, state: &SystemState, action: &ScheduleAction, cost: f64) -> String {
    let mut line = format!("{episode},{step}");
    for t in &state.tau {
        write!(line, ",{t}").expect("writing to a String");
    }
    for h in state.h.entries() {
        write!(line, ",{h}").expect("writing to a String");
    }
    for a in &action.0 {
        write!(line, ",{a}").expect("writing to a String");
    }
    write!(line, ",{cost}").expect("writing to a String");
    line
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub run_id: String,
    /// Variant name or baseline schedule name.
    pub policy: String,
    pub seed: u64,
    pub nec: Option<usize>,
    /// Average training cost over the last episodes; none for baselines.
    pub final_avg_cost: Option<f64>,
    pub eval_avg_cost: f64,
    pub eval_discounted_return: f64,
}

impl SummaryRow {
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<String>| x.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.run_id,
            self.policy,
            self.seed,
            opt(self.nec.map(|n| n.to_string())),
            opt(self.final_avg_cost.map(|c| c.to_string())),
            self.eval_avg_cost,
            self.eval_discounted_return
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Comparability(format!("malformed summary line `{line}`"));
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(Self {
            run_id: f[0].to_string(),
            policy: f[1].to_string(),
            seed: f[2].parse().map_err(|_| bad())?,
            nec: if f[3].is_empty() { None } else { Some(f[3].parse().map_err(|_| bad())?) },
            final_avg_cost: if f[4].is_empty() { None } else { Some(num(f[4])?) },
            eval_avg_cost: num(f[5])?,
            eval_discounted_return: num(f[6])?,
        })
    }
}

/// Everything a run produced, also kept in memory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub system: GeneratedSystem,
    pub summary: Vec<SummaryRow>,
    pub metrics: Vec<(Variant, Vec<EpisodeMetrics>)>,
    pub agents: Vec<Agent>,
}

impl RunOutcome {
    pub fn curve(&self, variant: Variant) -> Option<Vec<f64>> {
        self.metrics
            .iter()
            .find(|(v, _)| *v == variant)
            .map(|(_, rows)| rows.iter().map(|m| m.avg_sum_cost).collect())
    }

    pub fn row(&self, policy: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.policy == policy)
    }
}

pub fn run_id(config: &ExperimentConfig, variant: &str) -> String {
    format!("{}-s{}-{}", config.name, config.seed, variant)
}

pub fn metrics_line(run_id: &str, variant: Variant, m: &EpisodeMetrics) -> String {
    format!(
        "{run_id},{variant},{},{},{},{},{},{}",
        m.episode, m.avg_sum_cost, m.critic_loss, m.actor_loss, m.penalty, m.updates
    )
}

struct RunSink<'a> {
    rows: Vec<EpisodeMetrics>,
    run_id: String,
    variant: Variant,
    metrics: Option<&'a mut dyn Write>,
    timing: Option<&'a mut dyn Write>,
    training: Option<&'a mut dyn Write>,
}

impl TrainSink for RunSink<'_> {
    fn on_step(&mut self, episode: usize, step: usize, state: &SystemState, action: &ScheduleAction, sum_cost: f64) -> Result<()> {
        if let Some(w) = self.training.as_deref_mut() {
            writeln!(w, "{}", trajectory_line(episode, step, state, action, sum_cost))?;
        }
        Ok(())
    }

    fn on_episode(&mut self, m: &EpisodeMetrics) -> Result<()> {
        if let Some(w) = self.metrics.as_deref_mut() {
            writeln!(w, "{}", metrics_line(&self.run_id, self.variant, m))?;
        }
        if let Some(w) = self.timing.as_deref_mut() {
            writeln!(w, "{},{},{},{}", self.run_id, self.variant, m.episode, m.wall_seconds)?;
        }
        self.rows.push(m.clone());
        Ok(())
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

/// Generates the system, trains every configured variant, evaluates the
/// greedy policies (and baselines when requested) and, with `out_dir`,
/// writes `config.toml`, `system.toml`, `metrics.csv`, `timing.csv`,
/// `summary.csv` and one checkpoint per variant.
///
/// `metrics.csv` and `summary.csv` depend only on the config; wall-clock
/// times go to `timing.csv`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    config.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), config.to_toml())?;
    }
    let system = generate_system(config)?;
    if let Some(dir) = out_dir {
        let text = toml::to_string(&system.snapshot).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(dir.join("system.toml"), text)?;
    }
    let env = &system.env;
    let mut metrics_w = out_dir.map(|d| create(d, "metrics.csv")).transpose()?;
    let mut timing_w = out_dir.map(|d| create(d, "timing.csv")).transpose()?;
    if let Some(w) = metrics_w.as_mut() {
        writeln!(w, "{METRICS_HEADER}")?;
    }
    if let Some(w) = timing_w.as_mut() {
        writeln!(w, "{TIMING_HEADER}")?;
    }

    let gamma = config.train.gamma;
    let eval = &config.evaluation;
    let mut summary = Vec::new();
    let mut all_metrics = Vec::new();
    let mut agents = Vec::new();
    for &variant in &config.variants {
        let tc = config.train_config(variant);
        let id = run_id(config, variant.name());
        let mut agent = Agent::new(env, &tc, component_seed(config.seed, SeedStream::Agent))?;
        let mut env_rng = component_rng(config.seed, SeedStream::Environment);
        let mut training_w = match (out_dir, eval.dump_training) {
            (Some(d), true) => {
                let mut w = create(d, &format!("training_{variant}.csv"))?;
                writeln!(w, "{}", trajectory_header(env.num_devices(), env.num_channels()))?;
                Some(w)
            }
            _ => None,
        };
        let mut sink = RunSink {
            rows: Vec::new(),
            run_id: id.clone(),
            variant,
            metrics: metrics_w.as_mut().map(|w| w as &mut dyn Write),
            timing: timing_w.as_mut().map(|w| w as &mut dyn Write),
            training: training_w.as_mut().map(|w| w as &mut dyn Write),
        };
        train(&mut agent, env, &tc, &mut env_rng, &mut sink)?;
        let rows = sink.rows;
        if let Some(mut w) = training_w {
            w.flush()?;
        }
        let curve: Vec<f64> = rows.iter().map(|m| m.avg_sum_cost).collect();
        let mut traj_w = match (out_dir, eval.dump_trajectories) {
            (Some(d), true) => Some(create(d, &format!("trajectory_{variant}.csv"))?),
            _ => None,
        };
        let result = rollout(
            env,
            |s| agent.greedy_action(s),
            &mut component_rng(config.seed, SeedStream::Evaluation),
            eval.episodes,
            eval.horizon,
            gamma,
            traj_w.as_mut().map(|w| w as &mut dyn Write),
        )?;
        if let Some(mut w) = traj_w {
            w.flush()?;
        }
        if let Some(d) = out_dir {
            fs::write(d.join(format!("checkpoint_{variant}.txt")), agent.to_checkpoint())?;
        }
        summary.push(SummaryRow {
            run_id: id,
            policy: variant.name().into(),
            seed: config.seed,
            nec: nec(&curve),
            final_avg_cost: final_average(&curve),
            eval_avg_cost: result.avg_sum_cost,
            eval_discounted_return: result.discounted_return,
        });
        all_metrics.push((variant, rows));
        agents.push(agent);
    }

    if eval.baselines {
        for kind in BaselineKind::ALL {
            let mut policy_rng = ChaCha8Rng::seed_from_u64(component_seed(config.seed, SeedStream::Evaluation));
            policy_rng.set_stream(1);
            let mut traj_w = match (out_dir, eval.dump_trajectories) {
                (Some(d), true) => Some(create(d, &format!("trajectory_{}.csv", kind.name()))?),
                _ => None,
            };
            let result = rollout(
                env,
                |s| baseline_policy(kind, env, s, &mut policy_rng),
                &mut component_rng(config.seed, SeedStream::Evaluation),
                eval.episodes,
                eval.horizon,
                gamma,
                traj_w.as_mut().map(|w| w as &mut dyn Write),
            )?;
            if let Some(mut w) = traj_w {
                w.flush()?;
            }
            summary.push(SummaryRow {
                run_id: run_id(config, kind.name()),
                policy: kind.name().into(),
                seed: config.seed,
                nec: None,
                final_avg_cost: None,
                eval_avg_cost: result.avg_sum_cost,
                eval_discounted_return: result.discounted_return,
            });
        }
    }

    if let Some(mut w) = metrics_w {
        w.flush()?;
    }
    if let Some(mut w) = timing_w {
        w.flush()?;
    }
    if let Some(d) = out_dir {
        let mut text = String::from(SUMMARY_HEADER);
        text.push('\n');
        for r in &summary {
            text.push_str(&r.to_csv());
            text.push('\n');
        }
        fs::write(d.join("summary.csv"), text)?;
    }
    Ok(RunOutcome {
        system,
        summary,
        metrics: all_metrics,
        agents,
    })
}
