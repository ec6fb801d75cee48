use super::*;
use crate::bridging_env::{BridgingEnv, TrajectoryHeader, TrajectorySegment};

#[test]
fn config_defaults_and_seed_propagation() {
    let cfg = RunConfig::from_toml("seed = 7\n[env]\nvariant = \"b\"\n").unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.train.seed, 7);
    assert_eq!(cfg.env.variant, Variant::B);
    assert_eq!(cfg.env.n_agents, 3);
    let cfg = RunConfig::from_toml("seed = 7\n[train]\nseed = 3\n").unwrap();
    assert_eq!(cfg.train.seed, 3);
}

#[test]
fn config_rejects_unknown_and_invalid_keys() {
    assert!(matches!(RunConfig::from_toml("sed = 1\n"), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_toml("[env]\nspeed = 1\n"), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_toml("[train]\ngamma = 1.5\n"), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_toml("[env]\nvariant = \"d\"\n"), Err(Error::Config(_))));
    assert!(matches!(RunConfig::load("/definitely/missing.toml"), Err(Error::Io { .. })));
}

#[test]
fn schema_parses_back_to_defaults() {
    let schema = RunConfig::schema();
    assert!(schema.starts_with('#'));
    assert_eq!(RunConfig::from_toml(&schema).unwrap(), RunConfig::default());
}

#[test]
fn summary_table_shape() {
    let episodes = vec![
        EpisodeMetrics {
            episode: 0,
            seed: 1,
            steps: 100,
            coverage: 10.0,
            activations: 2,
            episode_return: 5.0,
        },
        EpisodeMetrics {
            episode: 1,
            seed: 2,
            steps: 100,
            coverage: 30.0,
            activations: 4,
            episode_return: 7.0,
        },
    ];
    let r = EvalReport::from_episodes(episodes);
    assert_eq!(r.coverage.mean, 20.0);
    assert_eq!(r.coverage.std, 10.0);
    let t = summary_table(&[("a".into(), &r)]);
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].contains("Avg Coverage"));
    assert!(lines[2].contains("20.00 ± 10.00"));
    assert!(lines[2].contains("3.00 ± 1.00"));
}

#[test]
fn small_geometry_run_agrees() {
    let r = verify_geometry(5, 300).unwrap();
    assert!(r.passed(), "{r:?}");
    assert!(r.agreed > 200);
}

#[test]
fn containment_small_run() {
    let r = verify_containment(3, 50, 100).unwrap();
    assert_eq!(r.failures, 0);
    assert!(r.worst_ratio <= 1.0 && r.worst_ratio > 0.5);
    assert!(r.clamped_draws > 0 && r.clamped_draws < 50);
}

#[test]
fn models_are_certified() {
    for m in verify_models(1, 10, 50).unwrap() {
        assert!(m.passed(), "{m:?}");
    }
}

#[test]
fn short_filter_scenarios_are_clean() {
    let f = verify_filter(0, 150).unwrap();
    assert_eq!(f.scenarios.len(), 5);
    for s in &f.scenarios {
        assert!(s.audit.clean(), "{s:?}");
    }
    let head_on = &f.scenarios[0];
    assert!(head_on.audit.activations > 0);
    let single = f.scenarios.iter().find(|s| s.name == "single-agent").unwrap();
    assert_eq!(single.audit.activations, 0);
    assert!(single.audit.updates > 0);
}

#[test]
fn reward_cases_are_exact() {
    for c in reward_cases().unwrap() {
        assert!(c.passed(), "{c:?}");
    }
}

fn logged_episode(dir: &Path) -> PathBuf {
    let cfg = EnvConfig {
        episode_len: 30,
        ..EnvConfig::default()
    };
    let mut env = BridgingEnv::new(cfg.clone()).unwrap();
    let path = dir.join("t.jsonl");
    let mut w = TrajectoryWriter::new(File::create(&path).unwrap());
    for (k, seed) in [4u64, 9].into_iter().enumerate() {
        env.reset(seed).unwrap();
        w.begin_episode(&TrajectoryHeader::new(k, seed, &cfg)).unwrap();
        for t in 0..30 {
            let acts: Vec<_> = (0..3)
                .map(|a| crate::bridging_env::ActionPair::from_index((t + 2 * a) % 9).unwrap())
                .collect();
            let out = env.step(&acts).unwrap();
            w.write_step(&env.record(&acts, &out)).unwrap();
        }
    }
    w.finish().unwrap();
    path
}

#[test]
fn replay_of_fresh_log_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = logged_episode(dir.path());
    let r = replay(&path).unwrap();
    assert_eq!(r, ReplayReport { episodes: 2, steps: 60 });
}

#[test]
fn replay_reports_tampered_reward() {
    let dir = tempfile::tempdir().unwrap();
    let path = logged_episode(dir.path());
    let mut segs = crate::bridging_env::read_trajectory(&path).unwrap();
    segs[1].steps[12].joint_reward += 0.5;
    let err = replay_segment(&segs[1]).unwrap_err();
    match err {
        Error::DivergenceAt { step, detail } => {
            assert_eq!(step, 12);
            assert!(detail.contains("joint_reward"), "{detail}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn replay_of_truncated_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = logged_episode(dir.path());
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() - 40]).unwrap();
    assert!(matches!(replay(&path), Err(Error::Parse(_))));
    std::fs::write(&path, "").unwrap();
    assert!(matches!(replay(&path), Err(Error::Parse(_))));
}

#[test]
fn replay_rejects_edited_config() {
    let cfg = EnvConfig::default();
    let mut seg = TrajectorySegment {
        header: TrajectoryHeader::new(0, 1, &cfg),
        steps: vec![],
    };
    seg.header.config.comm_range = 0.3;
    assert!(matches!(replay_segment(&seg), Err(Error::Parse(_))));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        output_dir: dir.path().join("run"),
        eval_episodes: 3,
        train: TrainConfig {
            total_steps: 250,
            learning_starts: 64,
            hidden: 8,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    let t = run_train(&cfg).unwrap();
    let train_records = read_metrics(&t.metrics).unwrap();
    assert_eq!(train_records.len(), 2);
    assert!(train_records.iter().all(|r| r.phase == Phase::Train && r.wall_clock_s.is_none()));

    let e = run_eval(&t.checkpoint, 3, 50, dir.path().join("eval"), false).unwrap();
    let recs = read_metrics(&e.metrics).unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!(recs[2].seed, 52);
    assert_eq!(replay(&e.trajectories).unwrap().episodes, 3);
    // Every reported number is recomputable from the trajectory log.
    let segs = crate::bridging_env::read_trajectory(&e.trajectories).unwrap();
    for (rec, seg) in recs.iter().zip(&segs) {
        let ret: f64 = seg.steps.iter().map(|s| s.joint_reward).sum();
        let acts: usize = seg.steps.iter().map(|s| s.activations.len()).sum();
        let paths = seg.steps.iter().filter(|s| s.reward.path_exists()).count();
        assert_eq!(rec.episode_return, ret);
        assert_eq!(rec.activations, acts);
        assert_eq!(rec.coverage, 100.0 * paths as f64 / seg.header.config.episode_len as f64);
    }
    let summary = std::fs::read_to_string(&e.summary).unwrap();
    assert!(summary.contains("| a "));
}
