use super::*;
use crate::cube::{build_cube, union_members, DimensionSchema, ObjectRecord};
use rand::Rng;

/// `n` cells of `size` objects each on one dimension, random embeddings,
/// and a query made of every other object of the first three cells.
fn instance(n: usize, size: usize, kappa: usize, seed: u64) -> (DataCube, CellEmbeddingTable, QuerySet) {
    let objects: Vec<_> = (0..n * size)
        .map(|i| ObjectRecord::new(format!("o{i:05}"), [("d", vec![format!("c{:04}", i / size)])]))
        .collect();
    let cube = build_cube(&objects, &[], DimensionSchema::from_names(["d"]).unwrap(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..kappa).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let emb = CellEmbeddingTable::from_rows(&rows).unwrap();
    let ids: Vec<String> = (0..(3 * size).min(n * size)).step_by(2).map(|i| format!("o{i:05}")).collect();
    let query = cube.resolve_query(&ids).unwrap();
    (cube, emb, query)
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        horizon: 3,
        alpha: 4,
        beta: 3,
        hidden: 8,
        minibatch_size: 8,
        seed,
        ..Default::default()
    }
}

#[test]
fn rollout_selects_distinct_cells_and_telescopes() {
    let (cube, emb, query) = instance(12, 4, 3, 1);
    let (params, _) = init_params(3, 8, 0, &emb).unwrap();
    let mut counter = EvalCounter::new();
    for s in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let traj = rollout(&params, &cube, &emb, &query, 5, &mut rng, &mut counter).unwrap();
        assert_eq!(traj.len(), 5);
        let cells = traj.cells();
        assert_eq!(cells.iter().collect::<BTreeSet<_>>().len(), 5);
        let q = relevance(&union_members(&cube, cells.iter().copied()).unwrap(), &query);
        assert!((traj.total_reward() - q).abs() <= 1e-12);
        assert_eq!(traj.final_quality, q);
        // state recurrence
        for w in traj.transitions.windows(2) {
            assert_eq!(&w[1].state - &w[0].state, emb.get(w[0].cell));
        }
        let last = traj.transitions.last().unwrap();
        assert_eq!(&traj.final_state - &last.state, emb.get(last.cell));
        assert!(traj.transitions[0].state.iter().all(|&x| x == 0.0));
    }
    assert_eq!(counter.count(), 100);
}

#[test]
fn rollout_stops_when_cells_run_out() {
    let (cube, emb, query) = instance(2, 3, 2, 2);
    let (params, _) = init_params(2, 4, 0, &emb).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let traj = rollout(&params, &cube, &emb, &query, 5, &mut rng, &mut EvalCounter::new()).unwrap();
    assert_eq!(traj.len(), 2);
}

#[test]
fn joint_log_density_factorizes() {
    let (cube, emb, query) = instance(8, 3, 4, 3);
    let (params, _) = init_params(4, 6, 1, &emb).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let traj = rollout(&params, &cube, &emb, &query, 4, &mut rng, &mut EvalCounter::new()).unwrap();
    let sigma = params.sigma();
    let recomputed: f64 = traj
        .transitions
        .iter()
        .map(|t| {
            let mu = forward(&params, t.state.view()).unwrap().mu;
            gaussian_log_density(t.action.view(), mu.view(), sigma).unwrap().log_density
        })
        .sum();
    assert!((traj.log_prob() - recomputed).abs() <= 1e-9 * recomputed.abs().max(1.0));
}

#[test]
fn advantage_examples() {
    let (adv, targets) = advantages_from_values(&[1.0], &[0.0], 0.5, 0.99);
    assert!((adv[0] - 1.495).abs() < 1e-12);
    assert!((targets[0] - 1.495).abs() < 1e-12);

    let rewards = [0.2, -0.1, 0.4];
    let values = [0.3, 0.7, -0.2];
    let (adv, targets) = advantages_from_values(&rewards, &values, 0.9, 0.0);
    for t in 0..2 {
        assert!((adv[t] - (rewards[t] - values[t])).abs() < 1e-15);
    }
    // t = T-1 with γ=0 also drops the terminal value
    assert!((adv[2] - (rewards[2] - values[2])).abs() < 1e-15);

    // brute-force sum for γ = 0.9
    let g: f64 = 0.9;
    let (adv, targets2) = advantages_from_values(&rewards, &values, 0.9, g);
    for t in 0..3 {
        let mut expect = -values[t];
        for (k, r) in rewards.iter().enumerate().skip(t) {
            expect += g.powi((k - t) as i32) * r;
        }
        expect += g.powi((3 - t) as i32) * 0.9;
        assert!((adv[t] - expect).abs() < 1e-12);
        assert!((targets2[t] - (adv[t] + values[t])).abs() < 1e-12);
    }
    let _ = targets;
}

#[test]
fn clipped_objective_cases() {
    let eps = 0.2;
    assert_eq!(clipped_objective(1.0 + 2.0 * eps, 2.0, eps), (1.0 + eps) * 2.0);
    assert_eq!(clipped_objective(1.0, 3.0, eps), 3.0);
    // negative advantage: the unclipped, smaller term wins
    assert_eq!(clipped_objective(1.0 + 2.0 * eps, -1.0, eps), -(1.0 + 2.0 * eps));
    assert_eq!(clipped_objective(0.5, -1.0, eps), -(1.0 - eps));
}

fn fixed_batch(kappa: usize, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Sample {
            state: (0..kappa).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: (0..kappa).map(|_| rng.random_range(-1.0..1.0)).collect(),
            log_prob_old: rng.random_range(-3.0..-1.0),
            advantage: rng.random_range(-1.0..1.0),
            value_target: rng.random_range(-1.0..1.0),
        })
        .collect()
}

fn value_loss(params: &PolicyParameters, batch: &[Sample]) -> f64 {
    batch
        .iter()
        .map(|s| {
            let v = forward(params, s.state.view()).unwrap().value;
            (v - s.value_target).powi(2)
        })
        .sum::<f64>()
        / batch.len() as f64
}

#[test]
fn repeated_updates_reduce_value_loss() {
    let emb = CellEmbeddingTable::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]]).unwrap();
    let (mut params, mut opt) = init_params(3, 16, 4, &emb).unwrap();
    let batch = fixed_batch(3, 32, 5);
    let config = TrainConfig {
        sgd_epochs: 1,
        minibatch_size: 32,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut prev = value_loss(&params, &batch);
    for _ in 0..5 {
        ppo_iteration(&mut params, &mut opt, &batch, &config, &mut rng).unwrap();
        let now = value_loss(&params, &batch);
        assert!(now < prev, "{now} !< {prev}");
        prev = now;
    }
}

#[test]
fn first_epoch_has_unit_ratio() {
    let emb = CellEmbeddingTable::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.5]]).unwrap();
    let (params, _) = init_params(2, 4, 0, &emb).unwrap();
    let sigma = params.sigma();
    let mut batch = fixed_batch(2, 8, 1);
    for s in &mut batch {
        let mu = forward(&params, s.state.view()).unwrap().mu;
        s.log_prob_old = gaussian_log_density(s.action.view(), mu.view(), sigma).unwrap().log_density;
    }
    let mut p = params.clone();
    let mut opt = OptimizerState::new(&p);
    let config = TrainConfig {
        sgd_epochs: 1,
        minibatch_size: 8,
        ..Default::default()
    };
    let stats = ppo_iteration(&mut p, &mut opt, &batch, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(stats.clip_fraction, 0.0);
    // normalized advantages average to zero, so the first surrogate is ~0
    assert!(stats.policy_loss.abs() < 1e-9);
}

#[test]
fn empty_batch_rejected() {
    let emb = CellEmbeddingTable::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    let (mut p, mut opt) = init_params(1, 2, 0, &emb).unwrap();
    let r = ppo_iteration(&mut p, &mut opt, &[], &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
    assert!(matches!(r, Err(Error::Input(_))));
}

#[test]
fn training_counts_and_determinism() {
    let (cube, emb, query) = instance(10, 4, 3, 6);
    let config = small_config(11);
    let a = train(&cube, &emb, &query, &config).unwrap();
    let b = train(&cube, &emb, &query, &config).unwrap();
    assert_eq!(a.report.quality_evaluations, (4 * 3 * 3) as u64);
    assert_eq!(a.report.trajectories, 12);
    assert_eq!(a.report.iterations.len(), 3);
    assert_eq!(a.params, b.params);
    let (mut ra, mut rb) = (a.report.clone(), b.report.clone());
    ra.wall_time_secs = 0.0;
    rb.wall_time_secs = 0.0;
    assert_eq!(ra, rb);
    let q = relevance(&union_members(&cube, ra.best_selection.iter().copied()).unwrap(), &query);
    assert_eq!(q, ra.best_quality);
    let top = ra.iterations.iter().map(|s| s.max_quality).fold(0.0, f64::max);
    assert!(ra.best_quality >= top);
    assert!(ra.iterations.windows(2).all(|w| w[1].best_quality >= w[0].best_quality));
}

#[test]
fn best_quality_matches_replayed_trajectories() {
    let (cube, emb, query) = instance(9, 3, 2, 8);
    let config = TrainConfig {
        beta: 1,
        ..small_config(2)
    };
    let out = train(&cube, &emb, &query, &config).unwrap();
    // With one iteration every trajectory is sampled from the initial params.
    let (params, _) = init_params(2, config.hidden, config.seed, &emb).unwrap();
    let mut best: f64 = 0.0;
    for j in 0..config.alpha {
        let mut rng = stream_rng(config.seed, 2 + j as u64);
        let traj = rollout(&params, &cube, &emb, &query, config.horizon, &mut rng, &mut EvalCounter::new()).unwrap();
        best = best.max(traj.best_prefix().1);
    }
    assert_eq!(out.report.best_quality, best);
}

#[test]
fn plan_is_deterministic_and_bounded() {
    let (cube, emb, query) = instance(10, 4, 3, 3);
    let config = small_config(5);
    let out = train(&cube, &emb, &query, &config).unwrap();
    let a = plan(&out.params, &cube, &emb, &query, 3, None).unwrap();
    let b = plan(&out.params, &cube, &emb, &query, 3, None).unwrap();
    assert_eq!(a, b);
    assert!(a.cells.len() <= 3);
    let with = plan(&out.params, &cube, &emb, &query, 3, Some(&out.report)).unwrap();
    assert!(with.quality >= a.quality);
    assert!(with.quality >= out.report.best_quality);
}

#[test]
fn invalid_config_rejected() {
    let bad = [
        TrainConfig { gamma: 0.0, ..Default::default() },
        TrainConfig { gamma: 1.5, ..Default::default() },
        TrainConfig { clip_epsilon: 1.0, ..Default::default() },
        TrainConfig { alpha: 0, ..Default::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err());
    }
    assert!(TrainConfig::default().validate().is_ok());
}
