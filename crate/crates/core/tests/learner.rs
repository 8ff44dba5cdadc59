use ndarray::Array3;
use proptest::prelude::*;

use tlrq_core::envs::{ChainMdpSpec, ChainSuiteConfig, SuiteConfig, TaskSuite};
use tlrq_core::harness::{self, stats, ExperimentConfig};
use tlrq_core::learner::{
    apply_update, batch_loss, semi_gradients, td_error, train, Algorithm, Hyperparams, LearningRate, Model,
    NoCheckpoints, TrajectorySet, Transition,
};
use tlrq_core::{rng, Dims, FactorSet};

fn chain_suite(tasks: Vec<ChainMdpSpec>, horizon: usize, seed: u64) -> TaskSuite {
    SuiteConfig::Chain(ChainSuiteConfig { tasks }).build(horizon, seed).unwrap()
}

fn two_task_chain() -> Vec<ChainMdpSpec> {
    let mut mirrored = vec![vec![0.0; 2]; 5];
    mirrored[0][0] = 1.0;
    mirrored[4][1] = 0.5;
    vec![ChainMdpSpec::five_state_chain(), ChainMdpSpec::walk(5, 0.1, mirrored, 0.9)]
}

fn small_hyper(rank: usize, episodes: usize) -> Hyperparams {
    let mut h = Hyperparams::with_rank(rank);
    h.episodes_per_task = episodes;
    h.episode_len = 20;
    h.epsilon = 0.3;
    h.learning_rate = LearningRate::Constant { eta0: 0.05 };
    h.seed = 11;
    h
}

fn run(algorithm: Algorithm, tasks: Vec<ChainMdpSpec>, hyper: &Hyperparams) -> (Model, Vec<(u64, Model)>) {
    let mut suite = chain_suite(tasks, hyper.episode_len, 5);
    let mut behaviour = rng::stream(hyper.seed, &[rng::tag::BEHAVIOR]);
    let mut seen = Vec::new();
    let mut sink = |n: u64, m: &Model| seen.push((n, m.clone()));
    let out = train(algorithm, &mut suite, hyper, &mut behaviour, &mut sink).unwrap();
    (out.model, seen)
}

#[test]
fn zero_budget_returns_the_initial_model() {
    let mut h = small_hyper(3, 2);
    h.total_iterations = Some(0);
    let (model, seen) = run(Algorithm::Stlrq, two_task_chain(), &h);
    let init = FactorSet::new(Dims::new(5, 2, 2).unwrap(), 3, rng::derive_seed(h.seed, &[rng::tag::INIT, 0])).unwrap();
    assert_eq!(model, Model::Joint(init));
    assert_eq!(seen.iter().map(|(n, _)| *n).collect::<Vec<_>>(), vec![0]);
}

#[test]
fn single_task_learners_coincide() {
    let h = small_hyper(2, 30);
    let tasks = vec![ChainMdpSpec::five_state_chain()];
    let (joint, joint_seen) = run(Algorithm::Stlrq, tasks.clone(), &h);
    let (indep, indep_seen) = run(Algorithm::Lrq, tasks.clone(), &h);
    let (shared, _) = run(Algorithm::Clrq, tasks, &h);
    let Model::Joint(j) = joint else { unreachable!() };
    let Model::Independent(i) = indep else { unreachable!() };
    let Model::Shared(s) = shared else { unreachable!() };
    assert_eq!(j, i[0]);
    assert_eq!(s, i[0]);
    for ((_, a), (_, b)) in joint_seen.iter().zip(&indep_seen) {
        assert_eq!(a.factor_sets(), b.factor_sets());
    }
}

#[test]
fn independent_models_only_move_for_their_own_task() {
    let mut h = small_hyper(2, 3);
    h.eval_interval = Some(1);
    let (_, seen) = run(Algorithm::Lrq, two_task_chain(), &h);
    assert_eq!(seen.len() as u64, 1 + h.total_iterations(2));
    for pair in seen.windows(2) {
        let (n, before) = (&pair[1].0, &pair[0].1);
        let after = &pair[1].1;
        // round robin with fixed-length episodes: transition n belongs to this task
        let task = ((n - 1) / h.episode_len as u64 % 2) as usize;
        let (Model::Independent(b), Model::Independent(a)) = (before, after) else { unreachable!() };
        assert_eq!(b[1 - task], a[1 - task], "transition {n} touched the other task's model");
    }
}

#[test]
fn lrq_spends_m_updates_per_transition() {
    let tasks = vec![ChainMdpSpec::five_state_chain(); 3];
    let h = small_hyper(2, 4);
    let mut suite = chain_suite(tasks, h.episode_len, 1);
    let mut behaviour = rng::seeded(3);
    let out = train(Algorithm::Lrq, &mut suite, &h, &mut behaviour, &mut NoCheckpoints).unwrap();
    let s = &out.stats;
    assert_eq!(s.transitions, 3 * 4 * 20);
    for m in 0..3 {
        assert_eq!(s.updates_per_model[m], 3 * s.transitions_per_task[m]);
    }
    assert_eq!(s.updates_per_model.iter().sum::<u64>(), 3 * s.transitions);
    for algorithm in [Algorithm::Stlrq, Algorithm::Clrq] {
        let mut suite = chain_suite(vec![ChainMdpSpec::five_state_chain(); 3], h.episode_len, 1);
        let out = train(algorithm, &mut suite, &h, &mut rng::seeded(3), &mut NoCheckpoints).unwrap();
        assert_eq!(out.stats.updates_per_model, vec![out.stats.transitions]);
    }
}

#[test]
fn lrq_update_equals_m_repeated_semi_gradient_steps() {
    // With one transition per task and no exploration noise in the update,
    // the learner's model must equal M hand-applied steps on that transition.
    let tasks = vec![ChainMdpSpec::five_state_chain(); 2];
    let mut h = small_hyper(2, 1);
    h.episode_len = 1;
    h.grad_clip = None;
    h.eval_interval = Some(1);
    let (_, seen) = run(Algorithm::Lrq, tasks, &h);
    let (Model::Independent(before), Model::Independent(after)) = (&seen[0].1, &seen[1].1) else { unreachable!() };
    let changed: Vec<(usize, usize)> = (0..5)
        .flat_map(|s| (0..2).map(move |a| (s, a)))
        .filter(|&(s, a)| before[0].evaluate(s, a, 0) != after[0].evaluate(s, a, 0))
        .collect();
    assert!(!changed.is_empty());
    // recover the sampled (s, a) by brute force over every possible transition
    let found = (0..5).any(|s| {
        (0..2).any(|a| {
            [0.0, 0.9, 1.0].iter().any(|&r| {
                (0..5).any(|s2| {
                    let t = Transition { task: 0, state: s, action: a, reward: r, next_state: s2 };
                    let mut fs = before[0].clone();
                    for _ in 0..2 {
                        let g = semi_gradients(&fs, &t, h.gamma, 1.0);
                        apply_update(&mut fs, &g, 0.05);
                    }
                    fs == after[0]
                })
            })
        })
    });
    assert!(found, "no transition reproduces two consecutive updates");
}

#[test]
fn runs_are_reproducible() {
    let h = small_hyper(3, 10);
    let (a, seen_a) = run(Algorithm::Stlrq, two_task_chain(), &h);
    let (b, seen_b) = run(Algorithm::Stlrq, two_task_chain(), &h);
    assert_eq!(a, b);
    assert_eq!(seen_a, seen_b);
    let other = Hyperparams { seed: 12, ..h };
    let (c, _) = run(Algorithm::Stlrq, two_task_chain(), &other);
    assert_ne!(a, c);
}

#[test]
fn identical_tasks_make_shared_and_joint_learners_equivalent() {
    // 4 copies of one chain; rank 8 joint (8 * (5 + 2 + 4) = 88 parameters)
    // against rank 11 shared (11 * (5 + 2 + 1) = 88 parameters).
    let mut hyper = Hyperparams::with_rank(8);
    hyper.gamma = 0.9;
    hyper.epsilon = 0.6;
    hyper.grad_clip = None;
    hyper.learning_rate = LearningRate::InverseStep { eta0: 0.005, decay: 1e-5 };
    hyper.episodes_per_task = 500;
    hyper.episode_len = 100;
    hyper.eval_interval = Some(50_000);
    hyper.eval_episodes = 5;
    let base = ExperimentConfig {
        suite: SuiteConfig::Chain(ChainSuiteConfig { tasks: vec![ChainMdpSpec::five_state_chain(); 4] }),
        algorithms: vec![Algorithm::Stlrq],
        replications: 20,
        base_seed: 0,
        out_dir: None,
        hyper,
        overrides: [(
            Algorithm::Clrq,
            harness::HyperOverride { rank: Some(11), ..Default::default() },
        )]
        .into(),
    };
    let cfg = ExperimentConfig { algorithms: vec![Algorithm::Stlrq, Algorithm::Clrq], ..base };
    let result = harness::run_experiment(&cfg, None).unwrap();
    assert!(result.failures.is_empty(), "{:?}", result.failures);
    let dofs: Vec<usize> = result.runs.iter().map(|r| r.model.dof()).collect();
    assert!(dofs.iter().all(|&d| d == 88));

    let per_seed = |alg| -> Vec<f64> {
        let finals = stats::final_returns(&result.records, alg);
        (0..20u64).map(|s| (0..4).map(|m| finals[&(s, m)]).sum::<f64>() / 4.0).collect()
    };
    let test = stats::paired_t_test_greater(&per_seed(Algorithm::Stlrq), &per_seed(Algorithm::Clrq)).unwrap();
    assert!(test.two_sided_p() > 0.05, "{test:?}");
}

fn factor_set(dims: (usize, usize, usize), rank: usize) -> impl Strategy<Value = FactorSet> {
    let (s, a, m) = dims;
    prop::collection::vec(0.0f64..1.0, (s + a + m) * rank).prop_map(move |v| {
        let q1 = ndarray::Array2::from_shape_vec((s, rank), v[..s * rank].to_vec()).unwrap();
        let q2 = ndarray::Array2::from_shape_vec((a, rank), v[s * rank..(s + a) * rank].to_vec()).unwrap();
        let q3 = ndarray::Array2::from_shape_vec((m, rank), v[(s + a) * rank..].to_vec()).unwrap();
        FactorSet::from_factors(q1, q2, q3).unwrap()
    })
}

fn instance() -> impl Strategy<Value = (FactorSet, Transition)> {
    (1usize..8, 1usize..8, 1usize..4, 1usize..4)
        .prop_flat_map(|(s, a, m, k)| {
            (
                factor_set((s, a, m), k),
                0..s,
                0..a,
                0..m,
                0..s,
                -2.0f64..2.0,
            )
        })
        .prop_map(|(fs, state, action, task, next_state, reward)| {
            (fs, Transition { task, state, action, reward, next_state })
        })
}

fn frozen_loss(fs: &FactorSet, t: &Transition, target: f64) -> f64 {
    (target - fs.evaluate(t.state, t.action, t.task)).powi(2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn updates_touch_only_three_rows((fs, t) in instance(), gamma in 0.0f64..0.99, eta in 0.0f64..0.5) {
        let mut after = fs.clone();
        apply_update(&mut after, &semi_gradients(&fs, &t, gamma, 1.0), eta);
        for (before, now, touched) in [(fs.q1(), after.q1(), t.state), (fs.q2(), after.q2(), t.action), (fs.q3(), after.q3(), t.task)] {
            for (i, (rb, rn)) in before.outer_iter().zip(now.outer_iter()).enumerate() {
                if i != touched {
                    prop_assert!(rb.iter().zip(rn.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
                }
            }
        }
    }

    #[test]
    fn small_steps_descend((fs, t) in instance(), gamma in 0.0f64..0.99) {
        let delta = td_error(&fs, &t, gamma);
        prop_assume!(delta.abs() > 1e-3);
        let target = delta + fs.evaluate(t.state, t.action, t.task);
        let mut after = fs.clone();
        apply_update(&mut after, &semi_gradients(&fs, &t, gamma, 1.0), 1e-5);
        prop_assert!(frozen_loss(&after, &t, target) < frozen_loss(&fs, &t, target));
    }

    #[test]
    fn task_weights_scale_gradients((fs, t) in instance(), gamma in 0.0f64..0.99, exp in -3i32..4, c in 0.1f64..10.0) {
        // powers of two scale exactly; other factors up to rounding
        let p = 2f64.powi(exp);
        let g1 = semi_gradients(&fs, &t, gamma, 1.0);
        let gp = semi_gradients(&fs, &t, gamma, p);
        let gc = semi_gradients(&fs, &t, gamma, c);
        for (r1, (rp, rc)) in g1.rows().iter().zip(gp.rows().iter().zip(gc.rows())) {
            for (x, (y, z)) in r1.values.iter().zip(rp.values.iter().zip(&rc.values)) {
                prop_assert_eq!(p * x, *y);
                prop_assert!((c * x - z).abs() <= 1e-12 * (1.0 + z.abs()));
            }
        }
        let (mut a, mut b) = (fs.clone(), fs.clone());
        apply_update(&mut a, &g1, 0.1);
        apply_update(&mut b, &gp, 0.1 / p);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn td_error_matches_the_dense_tensor((fs, t) in instance(), gamma in 0.0f64..0.99) {
        let full: Array3<f64> = fs.reconstruct_full();
        let next = (0..fs.dims().n_actions).map(|a| full[[t.next_state, a, t.task]]).fold(f64::NEG_INFINITY, f64::max);
        let expected = t.reward + gamma * next - full[[t.state, t.action, t.task]];
        prop_assert!((td_error(&fs, &t, gamma) - expected).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_matches_a_dense_recomputation(
        (fs, _) in instance(),
        raw in prop::collection::vec((0usize..64, 0usize..64, 0usize..64, 0usize..64, -2.0f64..2.0), 1..30),
        gamma in 0.0f64..0.99,
        weights in prop::collection::vec(0.1f64..3.0, 4),
    ) {
        let d = fs.dims();
        let mut data = TrajectorySet::new(d.n_tasks);
        for (s, a, m, s2, r) in raw {
            data.push(Transition { task: m % d.n_tasks, state: s % d.n_states, action: a % d.n_actions, reward: r, next_state: s2 % d.n_states });
        }
        let mut hyper = Hyperparams::with_rank(fs.rank());
        hyper.gamma = gamma;
        hyper.lambdas = Some(weights[..d.n_tasks].to_vec());
        let full = fs.reconstruct_full();
        let mut expected = 0.0;
        for t in data.per_task().iter().flatten() {
            let next = (0..d.n_actions).map(|a| full[[t.next_state, a, t.task]]).fold(f64::NEG_INFINITY, f64::max);
            let delta = t.reward + gamma * next - full[[t.state, t.action, t.task]];
            expected += weights[t.task] * delta * delta;
        }
        let got = batch_loss(&fs, &data, &hyper).unwrap();
        prop_assert!((got - expected).abs() <= 1e-10 * (1.0 + expected));
    }

    #[test]
    fn one_task_update_moves_every_coupled_task((fs, t) in instance(), gamma in 0.0f64..0.99) {
        let m = fs.dims().n_tasks;
        prop_assume!(m > 1);
        let delta = td_error(&fs, &t, gamma);
        prop_assume!(delta.abs() > 1e-6);
        let mut after = fs.clone();
        apply_update(&mut after, &semi_gradients(&fs, &t, gamma, 1.0), 0.1);
        for other in (0..m).filter(|&o| o != t.task) {
            // all factor entries are positive, so task `other` shares every column
            prop_assert_ne!(fs.task_slice(other), after.task_slice(other));
        }
    }
}

#[test]
fn decoupled_task_is_untouched() {
    let q1 = ndarray::array![[0.5, 1.0], [2.0, 0.3]];
    let q2 = ndarray::array![[1.0, 0.2], [0.7, 0.4]];
    // task 1 only loads on column 1, task 0 only on column 0
    let q3 = ndarray::array![[1.5, 0.0], [0.0, 0.8]];
    let mut fs = FactorSet::from_factors(q1, q2, q3).unwrap();
    let before = fs.task_slice(1);
    let t = Transition { task: 0, state: 1, action: 0, reward: 3.0, next_state: 0 };
    let g = semi_gradients(&fs, &t, 0.5, 1.0);
    apply_update(&mut fs, &g, 0.1);
    // task 0's gradient on q1/q2 is zero in column 1, so task 1 is unchanged
    assert_eq!(fs.task_slice(1), before);
    assert_ne!(fs.q3().row(0), ndarray::array![1.5, 0.0]);
}
