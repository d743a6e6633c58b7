use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smrl_core::envs::{make_env, Action, ActionSpace, EnvSpec};
use smrl_core::episodes::{finalize_episode, Episode, ReplayBuffer};
use smrl_core::kernels::{Kernel, RewardSequence, Smoother};
use smrl_core::worldmodel::{stack_history, ModelConfig, TrainingBatch, WorldModel};

fn train(model: &mut WorldModel, buf: &mut ReplayBuffer, space: &ActionSpace, steps: u64) {
    let cfg = model.config().clone();
    for id in 0..steps {
        let windows = buf.sample_uniform(cfg.batch, cfg.seq_len).unwrap();
        let batch = TrainingBatch::from_windows(id, &windows, cfg.history_stack, space).unwrap();
        model.train_step(&batch).unwrap();
    }
}

/// Scripted episodes with a share of uniformly random actions.
fn collect(spec: &EnvSpec, episodes: usize, noise: f64, smoother: &Smoother, seed: u64) -> Vec<Episode> {
    let mut env = make_env(spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..episodes)
        .map(|_| {
            let env_seed = rng.random();
            let mut ep = Episode::begin(&spec.id, env_seed, env.reset(env_seed));
            loop {
                let a = if rng.random_bool(noise) { spec.action_space.sample(&mut rng) } else { env.scripted_action() };
                let r = env.step(&a).unwrap();
                let done = r.done;
                ep.record(a, r).unwrap();
                if done {
                    break;
                }
            }
            finalize_episode(ep, smoother).unwrap()
        })
        .collect()
}

fn chain_step(x: f64, a: usize) -> f64 {
    (x + if a == 1 { 0.1 } else { -0.1 }).clamp(-1.0, 1.0)
}

#[test]
fn learns_a_deterministic_chain() {
    let space = ActionSpace::Discrete(2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut buf = ReplayBuffer::new(100_000, 0, 1.0).unwrap();
    for e in 0..40 {
        let mut x: f64 = rng.random_range(-1.0..1.0);
        let mut obs = vec![vec![x]];
        let mut acts = vec![None];
        for _ in 0..30 {
            let a = rng.random_range(0..2);
            x = chain_step(x, a);
            obs.push(vec![x]);
            acts.push(Some(Action::Discrete(a)));
        }
        let ep = Episode::from_parts("chain", e, obs, acts, vec![0.0; 31]).unwrap();
        buf.push(finalize_episode(ep, &Smoother::None).unwrap()).unwrap();
    }
    let cfg = ModelConfig {
        history_stack: 1,
        hidden_units: 32,
        learning_rate: 1e-2,
        ..ModelConfig::default()
    };
    let mut model = WorldModel::new(cfg, 1, 2, 0).unwrap();
    train(&mut model, &mut buf, &space, 2000);

    let mut se = 0.0;
    let mut n = 0.0;
    for k in 0..=40 {
        let x = -1.0 + 0.05 * k as f64;
        for a in 0..2 {
            let z = model.encode(&[x]).unwrap();
            let pred = model.predict_dynamics(&z, &space.encode(Some(&Action::Discrete(a)))).unwrap();
            let truth = model.encode(&[chain_step(x, a)]).unwrap();
            se += (pred[0] - truth[0]).powi(2);
            n += 1.0;
        }
    }
    let rms = (se / n).sqrt();
    assert!(rms < 0.05, "one-step RMS {rms}");
}

#[test]
fn loss_on_a_fixed_batch_does_not_increase() {
    let spec = EnvSpec::new("dense_reach", 3).unwrap();
    let eps = collect(&spec, 20, 0.5, &Smoother::None, 3);
    let mut buf = ReplayBuffer::new(100_000, 3, 1.0).unwrap();
    eps.into_iter().for_each(|e| buf.push(e).unwrap());
    let cfg = ModelConfig::default();
    let windows = buf.sample_uniform(cfg.batch, cfg.seq_len).unwrap();
    let batch = TrainingBatch::from_windows(0, &windows, cfg.history_stack, &spec.action_space).unwrap();
    let mut model = WorldModel::new(cfg, spec.obs_dim, spec.action_space.encoded_dim(), 3).unwrap();
    let total = |m: &WorldModel| {
        let l = m.loss(&batch).unwrap();
        l.dyn_mse + l.rew_mse
    };
    let mut prev = total(&model);
    let start = prev;
    for step in 0..50 {
        model.train_step(&batch).unwrap();
        let now = total(&model);
        assert!(now <= prev + 1e-12, "loss rose at step {step}: {prev} -> {now}");
        prev = now;
    }
    assert!(prev < start);
}

#[test]
fn constant_reward_is_fitted() {
    let space = ActionSpace::Discrete(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut buf = ReplayBuffer::new(100_000, 5, 10.0).unwrap();
    for e in 0..20 {
        let obs: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let acts = (0..25).map(|k| (k > 0).then(|| space.sample(&mut rng))).collect();
        let ep = Episode::from_parts("const", e, obs, acts, vec![2.5; 25]).unwrap();
        buf.push(finalize_episode(ep, &Smoother::None).unwrap()).unwrap();
    }
    let cfg = ModelConfig {
        history_stack: 1,
        hidden_units: 16,
        learning_rate: 1e-2,
        ..ModelConfig::default()
    };
    let mut model = WorldModel::new(cfg, 2, 2, 5).unwrap();
    train(&mut model, &mut buf, &space, 1500);
    for _ in 0..20 {
        let z = model.encode(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).unwrap();
        let r = model.predict_reward(&z).unwrap();
        assert!((r - 2.5).abs() < 0.025, "predicted {r}");
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn imagined_returns_track_realized_smoothed_returns() {
    let spec = EnvSpec::new("two_stage_grid", 0).unwrap();
    let smoother = Smoother::Kernel(Kernel::gaussian(2.0, 0).unwrap());
    let mut buf = ReplayBuffer::new(1_000_000, 1, 1.0).unwrap();
    for (k, noise) in [0.0, 0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
        for ep in collect(&spec, 40, noise, &smoother, 10 + k as u64) {
            buf.push(ep).unwrap();
        }
    }
    let cfg = ModelConfig {
        hidden_units: 32,
        learning_rate: 1e-2,
        reward_scale: 10.0,
        ..ModelConfig::default()
    };
    let stack = cfg.history_stack;
    let mut model = WorldModel::new(cfg, spec.obs_dim, 5, 1).unwrap();
    train(&mut model, &mut buf, &spec.action_space, 12_000);

    // Each probe follows the scripted policy up to t0 (after the lid opens),
    // then a continuation with probe-specific noise for `horizon` steps,
    // then idles to the end.
    let horizon = 10;
    let mut env = make_env(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut imagined = Vec::new();
    let mut realized = Vec::new();
    for probe in 0..50u64 {
        let noise = probe as f64 / 49.0;
        let t0 = 12 + (probe % 6) as usize;
        let mut ep = Episode::begin(&spec.id, probe, env.reset(1000 + probe));
        let mut probe_actions = Vec::new();
        for t in 0..spec.horizon {
            let a = if t < t0 {
                env.scripted_action()
            } else if t < t0 + horizon {
                let a = if rng.random_bool(noise) { spec.action_space.sample(&mut rng) } else { env.scripted_action() };
                probe_actions.push(spec.action_space.encode(Some(&a)));
                a
            } else {
                Action::Discrete(0)
            };
            let r = env.step(&a).unwrap();
            ep.record(a, r).unwrap();
        }
        let mut history = vec![0.0; spec.obs_dim * stack];
        stack_history(ep.steps(), t0, stack, &mut history);
        let z = model.encode(&history).unwrap();
        imagined.push(model.imagine(&z, &probe_actions).unwrap().rewards.iter().sum::<f64>());
        let smoothed = smoother.apply(&RewardSequence::undiscounted(ep.rewards_raw()).unwrap()).unwrap();
        realized.push(smoothed[t0 + 1..=t0 + horizon].iter().sum::<f64>());
    }
    let rho = pearson(&imagined, &realized);
    assert!(rho >= 0.7, "Pearson {rho}");
}
