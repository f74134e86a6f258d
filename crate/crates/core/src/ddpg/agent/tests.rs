use super::*;
use crate::channel::ChannelModel;
use crate::ddpg::{train, EpisodeMetrics};
use crate::estimation::CostModel;

fn env(n: usize, m: usize, tau_max: u32) -> SchedulingEnv {
    let ch = ChannelModel::uniform_links(n, m, &[0.6, 0.4], vec![0.05, 0.3]).unwrap();
    let costs = (0..n)
        .map(|k| CostModel::from_table((1..=tau_max).map(|t| (k + 1) as f64 * t as f64).collect()).unwrap())
        .collect();
    SchedulingEnv::new(ch, costs, tau_max).unwrap()
}

fn small_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        batch_size: 8,
        replay_capacity: 200,
        warmup: Some(16),
        episodes: 3,
        horizon: 12,
        actor_hidden: vec![8, 8],
        critic_hidden: vec![8, 8],
        monotone_state_hidden: 6,
        monotone_action_hidden: 5,
        ..Default::default()
    }
}

/// Transitions from a short random rollout.
fn rollout(env: &SchedulingEnv, count: usize, seed: u64) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = enumerate_actions(env.num_devices(), env.num_channels()).unwrap();
    let mut state = env.reset(&mut rng);
    let mut out = Vec::new();
    for _ in 0..count {
        let a = actions[rng.random_range(0..actions.len())].clone();
        let step = env.step(&state, &a, &mut rng).unwrap();
        out.push(Transition {
            state: env.encode_state(&state),
            raw_action: a.0.iter().map(|&x| x as f64).collect(),
            action: a,
            reward: step.reward,
            next_state: env.encode_state(&step.next_state),
            raw_state: state,
            raw_next_state: step.next_state.clone(),
        });
        state = step.next_state;
    }
    out
}

#[test]
fn zero_noise_is_deterministic_and_outputs_are_clipped() {
    let e = env(4, 2, 6);
    let mut agent = Agent::new(&e, &small_config(Variant::Baseline), 1).unwrap();
    let s = e.encode_state(&e.reset(&mut ChaCha8Rng::seed_from_u64(0)));
    assert_eq!(agent.select_action(&s, 0.0), agent.select_action(&s, 0.0));
    for _ in 0..500 {
        assert!(agent.select_action(&s, 5.0).iter().all(|&x| (0.0..=2.0).contains(&x)));
    }
    let mut a = Agent::new(&e, &small_config(Variant::Baseline), 9).unwrap();
    let mut b = Agent::new(&e, &small_config(Variant::Baseline), 9).unwrap();
    for _ in 0..20 {
        assert_eq!(a.select_action(&s, 0.7), b.select_action(&s, 0.7));
    }
}

#[test]
fn undiscounted_target_is_the_scaled_reward() {
    let e = env(3, 1, 5);
    let agent = Agent::new(&e, &small_config(Variant::Baseline), 2).unwrap();
    for t in rollout(&e, 10, 3) {
        for mode in [TdTargetMode::TargetActor, TdTargetMode::ExactMax] {
            assert_eq!(agent.td_target(&t, mode, 0.0, 0.5).unwrap(), 0.5 * t.reward);
        }
    }
}

#[test]
fn exact_max_dominates_target_actor() {
    let e = env(2, 1, 6);
    let agent = Agent::new(&e, &small_config(Variant::Mri), 4).unwrap();
    let data = rollout(&e, 50, 5);
    let batch: Vec<&Transition> = data.iter().collect();
    let ya = agent.td_targets(&batch, TdTargetMode::TargetActor, 0.9, 1.0).unwrap();
    let ym = agent.td_targets(&batch, TdTargetMode::ExactMax, 0.9, 1.0).unwrap();
    assert!(ya.iter().zip(&ym).all(|(a, m)| m >= a));
}

#[test]
fn exact_max_refuses_large_action_sets() {
    let e = env(10, 4, 4);
    let cfg = TrainConfig {
        td_target: TdTargetMode::ExactMax,
        ..small_config(Variant::Baseline)
    };
    assert!(matches!(Agent::new(&e, &cfg, 0), Err(Error::Capacity { .. })));
}

#[test]
fn zero_td_error_leaves_baseline_critic_unchanged() {
    let e = env(3, 2, 5);
    let mut agent = Agent::new(&e, &small_config(Variant::Baseline), 6).unwrap();
    let data = rollout(&e, 8, 7);
    let batch: Vec<&Transition> = data.iter().collect();
    let (s, a, _) = agent.batch_matrices(&batch).unwrap();
    let q = agent.critic.q_values(&s, &a).unwrap();
    let before = agent.critic.clone();
    let (stats, grads) = agent.critic_loss_and_grad(&batch, &q, &vec![Vec::new(); 8], 1.0).unwrap();
    assert_eq!(stats.loss, 0.0);
    assert_eq!(grads.max_abs(), 0.0);
    agent.critic_opt.step(&mut agent.critic, &grads, 1e-3);
    assert_eq!(agent.critic, before);
}

#[test]
fn monotone_signs_hold_after_every_update() {
    let e = env(3, 2, 5);
    let cfg = TrainConfig {
        lr_critic: 0.05,
        ..small_config(Variant::Ma)
    };
    let mut agent = Agent::new(&e, &cfg, 8).unwrap();
    let data = rollout(&e, 64, 9);
    let mut replay = ReplayBuffer::new(64).unwrap();
    for t in data {
        replay.push(t);
    }
    for _ in 0..200 {
        let batch = agent.sample_batch(&replay, 8).unwrap();
        agent.critic_update(&batch, &cfg, 0.1, cfg.lr_critic).unwrap();
        agent.actor_update(&batch, cfg.lr_actor).unwrap();
        agent.soft_update_targets(cfg.soft_update);
        match (&agent.critic, &agent.target_critic) {
            (Critic::Monotone(c), Critic::Monotone(t)) => {
                assert!(c.satisfies_sign_constraint() && t.satisfies_sign_constraint())
            }
            _ => panic!("MA agent must use a monotone critic"),
        }
    }
}

#[test]
fn disabled_penalties_reduce_to_baseline() {
    let e = env(3, 2, 5);
    let run = |variant: Variant| {
        let cfg = TrainConfig {
            penalty_samples: 0,
            ..small_config(variant)
        };
        let mut agent = Agent::new(&e, &cfg, 11).unwrap();
        let mut rows = Vec::new();
        let mut env_rng = ChaCha8Rng::seed_from_u64(12);
        train(&mut agent, &e, &cfg, &mut env_rng, &mut |m: &EpisodeMetrics| {
            rows.push((m.avg_sum_cost, m.critic_loss, m.actor_loss, m.penalty));
            Ok(())
        })
        .unwrap();
        (rows, agent.critic.clone(), agent.actor.clone())
    };
    let base = run(Variant::Baseline);
    assert!(base.0.iter().any(|r| r.1 > 0.0), "updates must have happened");
    assert_eq!(run(Variant::Mri), base);
    assert_eq!(run(Variant::Mrii), base);
}

#[test]
fn same_seed_gives_identical_training() {
    let e = env(3, 2, 5);
    let run = |variant: Variant| {
        let cfg = small_config(variant);
        let mut agent = Agent::new(&e, &cfg, 21).unwrap();
        let mut rows = Vec::new();
        let mut env_rng = ChaCha8Rng::seed_from_u64(22);
        train(&mut agent, &e, &cfg, &mut env_rng, &mut |m: &EpisodeMetrics| {
            rows.push((m.episode, m.avg_sum_cost, m.critic_loss, m.actor_loss, m.penalty, m.updates));
            Ok(())
        })
        .unwrap();
        (rows, agent.to_checkpoint())
    };
    for v in Variant::ALL {
        assert_eq!(run(v), run(v), "{v}");
    }
}

#[test]
fn zero_episodes_leave_agent_untouched() {
    let e = env(3, 1, 4);
    let cfg = TrainConfig {
        episodes: 0,
        ..small_config(Variant::Mrii)
    };
    let mut agent = Agent::new(&e, &cfg, 3).unwrap();
    let before = agent.to_checkpoint();
    let mut calls = 0;
    train(&mut agent, &e, &cfg, &mut ChaCha8Rng::seed_from_u64(0), &mut |_: &EpisodeMetrics| {
        calls += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(calls, 0);
    assert_eq!(agent.to_checkpoint(), before);
}

#[test]
fn critic_gradient_matches_finite_differences_with_penalties() {
    let e = env(3, 2, 5);
    for variant in [Variant::Baseline, Variant::Ma, Variant::Mri, Variant::Mrii] {
        let cfg = TrainConfig {
            penalty_samples: 3,
            critic_hidden: vec![7, 6],
            ..small_config(variant)
        };
        let mut agent = Agent::new(&e, &cfg, 30).unwrap();
        // Tanh hidden layers keep the penalty terms smooth for the check.
        if let Critic::Plain { net, .. } = &mut agent.critic {
            for l in net.layers_mut().iter_mut().rev().skip(1) {
                l.activation = Activation::Tanh;
            }
        }
        let data = rollout(&e, 10, 31);
        let batch: Vec<&Transition> = data.iter().collect();
        let targets: Vec<f64> = (0..10).map(|i| -1.0 + 0.1 * i as f64).collect();
        let plan = agent.penalty_plan(&batch, cfg.penalty_samples);
        let (stats, grads) = agent.critic_loss_and_grad(&batch, &targets, &plan, 0.8).unwrap();
        if matches!(variant, Variant::Mri | Variant::Mrii) {
            assert!(plan.iter().all(|p| !p.is_empty()));
        }
        let h = 1e-6;
        let mut probe = agent.clone();
        let slots = probe.critic.params().len();
        let mut worst: f64 = 0.0;
        for slot in 0..slots {
            for k in 0..probe.critic.params()[slot].len() {
                let orig = probe.critic.params()[slot][k];
                probe.critic.params_mut()[slot][k] = orig + h;
                let up = probe.critic_loss_and_grad(&batch, &targets, &plan, 0.8).unwrap().0.loss;
                probe.critic.params_mut()[slot][k] = orig - h;
                let down = probe.critic_loss_and_grad(&batch, &targets, &plan, 0.8).unwrap().0.loss;
                probe.critic.params_mut()[slot][k] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.0[slot][k];
                worst = worst.max((fd - an).abs() / an.abs().max(fd.abs()).max(1e-4));
            }
        }
        assert!(worst < 1e-5, "{variant}: worst relative error {worst} (loss {})", stats.loss);
    }
}

#[test]
fn penalties_in_the_loss_match_the_standalone_functions() {
    use crate::ddpg::{penalty_type1, penalty_type2};
    let e = env(3, 2, 5);
    for variant in [Variant::Mri, Variant::Mrii] {
        let cfg = TrainConfig {
            penalty_samples: 2,
            ..small_config(variant)
        };
        let mut agent = Agent::new(&e, &cfg, 40).unwrap();
        let data = rollout(&e, 12, 41);
        let batch: Vec<&Transition> = data.iter().collect();
        let plan = agent.penalty_plan(&batch, 2);
        let targets = vec![0.0; 12];
        let (stats, _) = agent.critic_loss_and_grad(&batch, &targets, &plan, 1.0).unwrap();
        let mut expected = 0.0;
        for (t, idx) in batch.iter().zip(&plan) {
            let a = encode_action(&t.action, 2);
            expected += match variant {
                Variant::Mri => penalty_type1(&agent.critic, &t.state, &a, idx),
                _ => penalty_type2(&agent.critic, &t.state, &a, idx, &agent.coding),
            };
        }
        expected /= 12.0;
        assert!((stats.penalty - expected).abs() < 1e-12 * expected.abs().max(1.0), "{variant}");
    }
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let e = env(3, 2, 5);
    let cfg = TrainConfig {
        actor_hidden: vec![6, 5],
        ..small_config(Variant::Baseline)
    };
    let mut agent = Agent::new(&e, &cfg, 50).unwrap();
    for l in agent.actor.layers_mut().iter_mut().rev().skip(1) {
        l.activation = Activation::Tanh;
    }
    if let Critic::Plain { net, .. } = &mut agent.critic {
        for l in net.layers_mut().iter_mut().rev().skip(1) {
            l.activation = Activation::Tanh;
        }
    }
    let data = rollout(&e, 6, 51);
    let s = Matrix::from_rows(e.state_dim(), data.iter().map(|t| t.state.as_slice())).unwrap();
    let (_, grads) = agent.actor_loss_and_grad(&s).unwrap();
    let h = 1e-6;
    let mut probe = agent.clone();
    for slot in 0..probe.actor.params().len() {
        for k in 0..probe.actor.params()[slot].len() {
            let orig = probe.actor.params()[slot][k];
            probe.actor.params_mut()[slot][k] = orig + h;
            let up = probe.actor_loss_and_grad(&s).unwrap().0;
            probe.actor.params_mut()[slot][k] = orig - h;
            let down = probe.actor_loss_and_grad(&s).unwrap().0;
            probe.actor.params_mut()[slot][k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads.0[slot][k];
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(fd.abs()).max(1e-3), "slot {slot} idx {k}: {fd} vs {an}");
        }
    }
}

#[test]
fn action_independent_critic_gives_zero_actor_gradient() {
    let e = env(3, 2, 5);
    let mut agent = Agent::new(&e, &small_config(Variant::Baseline), 60).unwrap();
    if let Critic::Plain { net, action_dim } = &mut agent.critic {
        let first = &mut net.layers_mut()[0];
        let cols = first.inputs;
        for r in 0..first.outputs {
            for c in cols - *action_dim..cols {
                first.weights[r * cols + c] = 0.0;
            }
        }
    }
    let data = rollout(&e, 5, 61);
    let s = Matrix::from_rows(e.state_dim(), data.iter().map(|t| t.state.as_slice())).unwrap();
    assert_eq!(agent.actor_loss_and_grad(&s).unwrap().1.max_abs(), 0.0);
}

#[test]
fn scalar_policy_gradient_reaches_the_peak() {
    // Q(u) = -(u - 0.7)^2 on a single sigmoid output starting near 0.
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let mut actor = Mlp::new(&[1, 4, 1], Activation::Relu, Activation::Sigmoid, &mut rng).unwrap();
    actor.layers_mut()[1].bias[0] = -6.0;
    let mut opt = Adam::new(&actor);
    let states = Matrix::new(4, 1, vec![0.1, 0.4, 0.6, 0.9]).unwrap();
    let start = actor.predict(&[0.5]).unwrap()[0];
    assert!(start < 0.01);
    for _ in 0..3000 {
        let (_, g) = policy_gradient(&actor, &states, |_, u| {
            let q = u.data.iter().map(|x| -(x - 0.7) * (x - 0.7)).collect();
            Ok((q, u.map(|x| -2.0 * (x - 0.7))))
        })
        .unwrap();
        opt.step(&mut actor, &g, 0.01);
    }
    for &x in &[0.1, 0.4, 0.6, 0.9] {
        let u = actor.predict(&[x]).unwrap()[0];
        assert!((u - 0.7).abs() < 1e-3, "u({x}) = {u}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let e = env(3, 2, 5);
    for v in Variant::ALL {
        let agent = Agent::new(&e, &small_config(v), 80).unwrap();
        let text = agent.to_checkpoint();
        let back = Agent::from_checkpoint(&text, 0).unwrap();
        assert_eq!(back.to_checkpoint(), text);
        assert_eq!(back.variant(), v);
        let st = e.reset(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(back.greedy_action(&st), agent.greedy_action(&st));
    }
    assert!(Agent::from_checkpoint("agent\nvariant td3\n", 0).is_err());
}

#[test]
fn nan_parameters_are_reported_as_divergence() {
    let e = env(3, 2, 5);
    let cfg = small_config(Variant::Baseline);
    let mut agent = Agent::new(&e, &cfg, 90).unwrap();
    agent.critic.params_mut()[0][0] = f64::NAN;
    let err = train(&mut agent, &e, &cfg, &mut ChaCha8Rng::seed_from_u64(0), &mut |_: &EpisodeMetrics| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Diverged { episode: 0, .. }), "{err}");
}
