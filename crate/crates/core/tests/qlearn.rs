use std::sync::Arc;

use diffgame_core::game::{Agent, ConstantPolicy, ContinuousGame, ControlSet, DiscretizedGame, GameModel, Policy};
use diffgame_core::mesh::ActionMesh;
use diffgame_core::qlearn::{train_best_response, train_on, write_log, Algorithm, BestResponseConfig, PolicyRule, TrainConfig, TrainedModel};
use diffgame_core::Error;

/// `f = 0`, `f0 = c`, `sigma = 0`: every action pair is worth `c (T - t_i)`.
struct ConstantReward(f64);

impl GameModel for ConstantReward {
    fn dynamics(&self, _t: f64, _x: &[f64], _u: &[f64], _v: &[f64], dx: &mut [f64]) {
        dx[0] = 0.0;
    }

    fn running_cost(&self, _t: f64, _x: &[f64], _u: &[f64], _v: &[f64]) -> f64 {
        self.0
    }

    fn terminal_cost(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

/// `x' = u + v`, `sigma = x^2`.
struct Tracking;

impl GameModel for Tracking {
    fn dynamics(&self, _t: f64, _x: &[f64], u: &[f64], v: &[f64], dx: &mut [f64]) {
        dx[0] = u[0] + v[0];
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        x[0] * x[0]
    }
}

fn game(model: Arc<dyn GameModel>, x0: f64) -> ContinuousGame {
    ContinuousGame::new(
        "test",
        1.0,
        vec![x0],
        ControlSet::interval(-1.0, 1.0),
        ControlSet::interval(-1.0, 1.0),
        2.0,
        model,
    )
    .unwrap()
}

fn constant_game() -> DiscretizedGame {
    let mesh = ActionMesh::linear(-1.0, 1.0, 2).unwrap();
    DiscretizedGame::uniform(game(Arc::new(ConstantReward(1.0)), 0.3), 0.25, mesh.clone(), mesh).unwrap()
}

fn small_config(algorithm: Algorithm, steps: usize, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::for_env(algorithm, "get_into_circle", seed).unwrap();
    c.hidden = vec![32, 32];
    c.batch_size = 32;
    c.total_steps = steps;
    c.buffer_capacity = 10_000;
    c
}

#[test]
fn every_algorithm_learns_constant_reward_to_go() {
    let dg = constant_game();
    for alg in Algorithm::ALL {
        let model = train_on(&small_config(alg, 20_000, 3), &dg).unwrap().model;
        for agent in [Agent::First, Agent::Second] {
            let policy = model.policy(agent);
            for i in 0..dg.num_steps() {
                let expected = 1.0 - dg.partition().time(i);
                for v in policy.values(i, &[0.3]).unwrap() {
                    assert!((v - expected).abs() <= 0.05, "{alg} {agent:?} i={i}: {v} vs {expected}");
                }
            }
        }
    }
}

#[test]
fn training_is_deterministic() {
    let dg = constant_game();
    for alg in Algorithm::ALL {
        let cfg = small_config(alg, 600, 11);
        let a = train_on(&cfg, &dg).unwrap();
        let b = train_on(&cfg, &dg).unwrap();
        let (mut la, mut lb) = (Vec::new(), Vec::new());
        write_log(&a.log, &mut la).unwrap();
        write_log(&b.log, &mut lb).unwrap();
        assert_eq!(la, lb, "{alg}");
        assert_eq!(a.model, b.model, "{alg}");
        let c = train_on(&small_config(alg, 600, 12), &dg).unwrap();
        assert_ne!(a.model, c.model, "{alg}: seed must matter");
    }
}

#[test]
fn counterdqn_logs_two_runs() {
    let dg = constant_game();
    let out = train_on(&small_config(Algorithm::CounterDqn, 400, 0), &dg).unwrap();
    assert!(out.log.iter().any(|r| r.run == 0));
    assert!(out.log.iter().any(|r| r.run == 1));
    assert!(out.log.windows(2).all(|w| w[0].run <= w[1].run));
}

#[test]
fn decentralized_with_single_action_opponent_matches_best_response() {
    let u_mesh = ActionMesh::linear(-1.0, 1.0, 4).unwrap();
    let v_mesh = ActionMesh::from_points(vec![vec![0.0]], ControlSet::interval(-1.0, 1.0)).unwrap();
    let dg = DiscretizedGame::uniform(game(Arc::new(Tracking), 0.5), 0.25, u_mesh, v_mesh).unwrap();
    let cfg = small_config(Algorithm::DoubleDdqn, 1500, 5);
    let model = train_on(&cfg, &dg).unwrap().model;
    let br = BestResponseConfig {
        lr: cfg.lr,
        hidden: cfg.hidden.clone(),
        steps: cfg.total_steps,
        batch_size: cfg.batch_size,
        tau: cfg.tau,
        buffer_capacity: cfg.buffer_capacity,
        gamma: cfg.gamma,
        seed: cfg.seed,
    };
    let (policy, _) = train_best_response(&dg, &ConstantPolicy(0), Agent::Second, &br).unwrap();
    match (&model.first.rule, &policy.rule) {
        (PolicyRule::Own { net: a }, PolicyRule::Own { net: b }) => assert_eq!(a.params(), b.params()),
        other => panic!("unexpected rules {other:?}"),
    }
}

#[test]
fn learned_best_response_drives_tracking_state_to_zero() {
    let u_mesh = ActionMesh::linear(-1.0, 1.0, 4).unwrap();
    let v_mesh = ActionMesh::from_points(vec![vec![0.0]], ControlSet::interval(-1.0, 1.0)).unwrap();
    let dg = DiscretizedGame::uniform(game(Arc::new(Tracking), 0.5), 0.25, u_mesh, v_mesh).unwrap();
    let br = BestResponseConfig {
        hidden: vec![32, 32],
        steps: 6000,
        batch_size: 32,
        ..BestResponseConfig::default()
    };
    let (policy, _) = train_best_response(&dg, &ConstantPolicy(0), Agent::Second, &br).unwrap();
    let j = dg.play(&policy, &ConstantPolicy(0)).unwrap();
    assert!(j <= 0.02, "J = {j}");
}

#[test]
fn didqn_logs_additive_matrices() {
    let dg = constant_game();
    let out = train_on(&small_config(Algorithm::Didqn, 800, 2), &dg).unwrap();
    assert!(!out.log.is_empty());
    for r in &out.log {
        assert!(r.additivity_residual.unwrap() <= 1e-9);
    }
    let other = train_on(&small_config(Algorithm::Idqn, 200, 2), &dg).unwrap();
    assert!(other.log.iter().all(|r| r.additivity_residual.is_none()));
}

#[test]
fn model_round_trips_through_disk() {
    let dg = constant_game();
    let dir = tempfile::tempdir().unwrap();
    for alg in Algorithm::ALL {
        let model = train_on(&small_config(alg, 200, 1), &dg).unwrap().model;
        let path = dir.path().join(format!("{alg}.json"));
        model.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back, model);
        for i in 0..dg.num_steps() {
            assert_eq!(back.first.act(i, &[0.3]), model.first.act(i, &[0.3]));
            assert_eq!(back.second.act(i, &[0.3]), model.second.act(i, &[0.3]));
        }
    }
}

#[test]
fn model_with_unknown_version_is_rejected() {
    let dg = constant_game();
    let mut model = train_on(&small_config(Algorithm::Idqn, 100, 1), &dg).unwrap().model;
    model.format_version = 99;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    assert!(matches!(TrainedModel::load(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let dg = constant_game();
    let mut c = small_config(Algorithm::Idqn, 100, 0);
    c.lr = 0.0;
    assert!(matches!(train_on(&c, &dg), Err(Error::Config(_))));
    let mut c = small_config(Algorithm::Idqn, 100, 0);
    c.buffer_capacity = 4;
    assert!(train_on(&c, &dg).is_err());
}
