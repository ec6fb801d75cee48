use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bridging_env::{ActionPair, BridgingEnv, EnvConfig, Observation, Variant};
use crate::error::{Error, Result};

fn env_config() -> EnvConfig {
    EnvConfig::default().with_variant(Variant::A)
}

fn shape(hidden: usize) -> NetShape {
    NetShape::for_variant(3, Variant::A, hidden)
}

/// Transitions from a uniformly random rollout, with recurrent states filled in
/// by `params`.
fn rollout(params: &QNetworkParams, seed: u64, steps: usize) -> Vec<Transition> {
    let mut env = BridgingEnv::new(env_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = env.reset(seed).unwrap();
    let mut rec = vec![vec![0.0; params.shape().hidden]; 3];
    let mut out = Vec::new();
    for _ in 0..steps {
        let actions: Vec<ActionPair> = (0..3)
            .map(|_| ActionPair::from_index(rng.random_range(0..9)).unwrap())
            .collect();
        let next_rec: Vec<Vec<f64>> = (0..3).map(|k| forward_q(params, &obs[k], &rec[k]).unwrap().1).collect();
        let o = env.step(&actions).unwrap();
        for k in 0..3 {
            out.push(Transition {
                obs: obs[k].clone(),
                action: actions[k].index(),
                reward: o.joint_reward,
                next_obs: o.observations[k].clone(),
                done: o.done(),
                rec: rec[k].clone(),
                next_rec: next_rec[k].clone(),
            });
        }
        if o.done() {
            obs = env.reset(seed + 1).unwrap();
            rec = vec![vec![0.0; params.shape().hidden]; 3];
        } else {
            obs = o.observations;
            rec = next_rec;
        }
    }
    out
}

/// Random observations with 0 to 3 neighbors and random recurrent states.
fn synthetic(shape: NetShape, seed: u64, count: usize) -> Vec<Transition> {
    use crate::bridging_env::NeighborEntry;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vec = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let obs = |rng: &mut ChaCha8Rng| {
        let m = rng.random_range(0..4);
        Observation {
            agent: 0,
            ego: vec(shape.node_dim, rng),
            neighbors: (0..m)
                .map(|k| NeighborEntry {
                    agent: k + 1,
                    node: vec(shape.node_dim, rng),
                    edge: vec(shape.edge_dim, rng),
                })
                .collect(),
        }
    };
    (0..count)
        .map(|_| Transition {
            obs: obs(&mut rng),
            action: rng.random_range(0..N_ACTIONS),
            reward: rng.random_range(-1.0..1.0),
            next_obs: obs(&mut rng),
            done: rng.random_bool(0.2),
            rec: vec(shape.hidden, &mut rng).iter().map(|v| 0.5 * v).collect(),
            next_rec: vec(shape.hidden, &mut rng).iter().map(|v| 0.5 * v).collect(),
        })
        .collect()
}

#[test]
fn gradients_match_finite_differences() {
    for seed in [1, 2, 3] {
        let params = QNetworkParams::init(shape(8), seed);
        let target = QNetworkParams::init(shape(8), seed + 100);
        let mut data = synthetic(shape(8), seed, 24);
        data.extend(rollout(&params, seed, 3));
        let batch: Vec<&Transition> = data.iter().collect();
        let report = gradient_check(&params, &target, &batch, 0.99, 1e-5).unwrap();
        for r in report {
            assert!(r.analytic_norm > 0.0, "{:?} has no gradient", r.group);
            assert!(r.rel_error <= 1e-4, "seed {seed}: {:?}", r);
        }
    }
}

#[test]
fn bandit_converges_to_reward() {
    let params = QNetworkParams::init(shape(8), 5);
    let mut data = rollout(&params, 5, 1);
    data.truncate(1);
    data[0].reward = 0.7;
    let batch: Vec<&Transition> = vec![&data[0]; 16];
    let mut p = params.clone();
    let target = params.clone();
    let first = td_update(&mut p, &target, &batch, 0.0, 0.05, 10.0).unwrap();
    let mut last = first;
    for _ in 0..400 {
        last = td_update(&mut p, &target, &batch, 0.0, 0.05, 10.0).unwrap();
    }
    assert!(last < 1e-10, "loss {first} -> {last}");
    let (q, _) = forward_q(&p, &data[0].obs, &data[0].rec).unwrap();
    assert!((q[data[0].action] - 0.7).abs() < 1e-5);
}

#[test]
fn overfits_a_frozen_batch() {
    let params = QNetworkParams::init(shape(16), 9);
    let data = rollout(&params, 9, 30);
    let batch: Vec<&Transition> = data.iter().take(64).collect();
    let mut learner = QLearner::new(params, &TrainConfig::default());
    let first = learner.update(&batch).unwrap();
    let mut last = first;
    for _ in 0..99 {
        last = learner.update(&batch).unwrap();
    }
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn target_network_holds_between_syncs() {
    let params = QNetworkParams::init(shape(8), 2);
    let data = rollout(&params, 2, 10);
    let batch: Vec<&Transition> = data.iter().collect();
    let cfg = TrainConfig {
        target_sync: 5,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let mut learner = QLearner::new(params.clone(), &cfg);
    for _ in 0..4 {
        learner.update(&batch).unwrap();
        assert_eq!(learner.target, params);
        assert_ne!(learner.online, params);
    }
    learner.update(&batch).unwrap();
    assert_eq!(learner.target, learner.online);
}

#[test]
fn non_finite_loss_aborts() {
    let params = QNetworkParams::init(shape(8), 2);
    let mut data = rollout(&params, 2, 2);
    data[0].reward = f64::NAN;
    let batch: Vec<&Transition> = data.iter().collect();
    let mut learner = QLearner::new(params, &TrainConfig::default());
    assert!(matches!(learner.update(&batch), Err(Error::NonFiniteLoss { .. })));
}

#[test]
fn adam_updates_parameters() {
    let params = QNetworkParams::init(shape(8), 4);
    let data = rollout(&params, 4, 20);
    let batch: Vec<&Transition> = data.iter().collect();
    let cfg = TrainConfig {
        optimizer: OptimizerKind::Adam,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let mut learner = QLearner::new(params.clone(), &cfg);
    let first = learner.update(&batch).unwrap();
    let mut last = first;
    for _ in 0..99 {
        last = learner.update(&batch).unwrap();
    }
    assert!(last < first);
}

#[test]
fn zero_steps_returns_initial_params() {
    let cfg = TrainConfig {
        total_steps: 0,
        seed: 17,
        ..TrainConfig::default()
    };
    let out = train(&env_config(), &cfg).unwrap();
    assert_eq!(out.params, QNetworkParams::init(shape(DEFAULT_HIDDEN), 17));
    assert!(out.curve.is_empty());
}

fn short_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        total_steps: 450,
        learning_starts: 64,
        hidden: 8,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let a = train(&env_config(), &short_cfg(3)).unwrap();
    let b = train(&env_config(), &short_cfg(3)).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.params, b.params);
    assert_eq!(a.curve.len(), 4);
    assert!(a.updates > 0);
    let c = train(&env_config(), &short_cfg(4)).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn evaluation_metrics_are_consistent() {
    let params = QNetworkParams::init(shape(DEFAULT_HIDDEN), 6);
    let mut per_step = 0;
    let mut final_totals = 0;
    let report = evaluate_policy_with(&mut GreedyPolicy::new(&params), &env_config(), 5, 100, |_, env, _, out| {
        per_step += out.info.activations.len();
        if out.done() {
            final_totals += env.state().total_activations;
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(report.episodes.len(), 5);
    for e in &report.episodes {
        assert!((0.0..=100.0).contains(&e.coverage));
        assert!(e.episode_return.is_finite());
    }
    let summed: usize = report.episodes.iter().map(|e| e.activations).sum();
    assert_eq!(summed, per_step);
    assert_eq!(summed, final_totals);
    assert_eq!(report, evaluate(&params, &env_config(), 5, 100).unwrap());
}

#[test]
fn evaluation_enforces_the_filter() {
    let params = QNetworkParams::init(NetShape::for_variant(3, Variant::Baseline, 8), 6);
    let cfg = EnvConfig::default().with_variant(Variant::Baseline);
    evaluate_policy_with(&mut GreedyPolicy::new(&params), &cfg, 3, 0, |_, env, _, _| {
        assert!(env.config().filter_enforced());
        assert_eq!(
            crate::safety_filter::first_unsafe_pair(&env.state().trackers, env.params()).unwrap(),
            None
        );
        Ok(())
    })
    .unwrap();
}

#[test]
fn mismatched_dims_are_refused() {
    let params = QNetworkParams::init(NetShape::for_variant(3, Variant::ANode, 8), 1);
    assert!(matches!(
        evaluate(&params, &env_config(), 1, 0),
        Err(Error::ShapeMismatch(_))
    ));
}

/// Parks the agents at evenly spaced points on the T1–T2 segment, filling the
/// slots in the order of the agents' projections onto the segment. A blocked
/// agent sidesteps perpendicular to its intended move.
struct ParkOnSegment;

impl Policy for ParkOnSegment {
    fn begin_episode(&mut self, _n_agents: usize, _episode_seed: u64) {}

    fn act(&mut self, env: &BridgingEnv, _obs: &[Observation]) -> Result<Vec<ActionPair>> {
        let s = env.state();
        let [t0, t1] = s.target_positions();
        let n = s.agents.len();
        let dir = [t1[0] - t0[0], t1[1] - t0[1]];
        let proj = |p: [f64; 2]| (p[0] - t0[0]) * dir[0] + (p[1] - t0[1]) * dir[1];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| proj(s.agents[a].position()).total_cmp(&proj(s.agents[b].position())));
        let dead = env.config().action_offset / 8.0;
        let sign = |d: f64| {
            if d > dead {
                1
            } else if d < -dead {
                -1
            } else {
                0
            }
        };
        let mut actions = vec![ActionPair::HOLD; n];
        for (slot, &k) in order.iter().enumerate() {
            let f = (slot + 1) as f64 / (n + 1) as f64;
            let goal = [t0[0] + f * dir[0], t0[1] + f * dir[1]];
            let p = s.agents[k].position();
            let (ax, ay) = (sign(goal[0] - p[0]), sign(goal[1] - p[1]));
            actions[k] = if s.last_blocked_agents[k] {
                ActionPair { ax: -ay, ay: ax }
            } else {
                ActionPair { ax, ay }
            };
        }
        Ok(actions)
    }
}

#[test]
fn scripted_bridge_reaches_high_coverage() {
    let cfg = EnvConfig {
        static_targets: true,
        episode_len: 400,
        ..env_config()
    };
    let report = evaluate_policy(&mut ParkOnSegment, &cfg, 10, 0).unwrap();
    assert!(report.coverage.mean > 90.0, "{:?}", report.coverage);
    let random = evaluate_policy(&mut UniformRandomPolicy::default(), &cfg, 10, 0).unwrap();
    assert!(report.episode_return.mean > random.episode_return.mean);
}

#[test]
fn checkpoint_round_trip_and_checks() {
    let env = env_config();
    let train_cfg = TrainConfig {
        hidden: 8,
        ..TrainConfig::default()
    };
    let params = QNetworkParams::init(shape(8), 31);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    Checkpoint::new(&params, &env, &train_cfg).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.params().unwrap(), params);
    assert_eq!(back.env_config, env);

    let mut tampered = back.clone();
    tampered.env_config.n_agents = 4;
    tampered.save(&path).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Parse(_))));

    let mut old = back.clone();
    old.version = 0;
    old.save(&path).unwrap();
    assert!(matches!(
        Checkpoint::load(&path),
        Err(Error::VersionMismatch { expected: 1, found: 0 })
    ));

    let mut short = back;
    short.blocks[3].data.pop();
    assert!(matches!(short.params(), Err(Error::ShapeMismatch(_))));
    assert!(matches!(Checkpoint::load(dir.path().join("missing.json")), Err(Error::Io { .. })));
}
