use metabandit::linalg;
use metabandit::meta::{meta_posterior_update, MetaPosterior};
use metabandit::ts::{ts_init, ts_update};
use metabandit::variants::finite::{finite_prior_select, finite_prior_update, PriorBank};
use metabandit::variants::{lp_argmax, Polyhedron};
use metabandit::{instant_regret, BanditInstance, GaussianBelief, HistoryEntry, Matrix, Pull, RoundContexts, Vector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec_of(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d)
}

/// SPD matrix `L Lᵀ + 0.2 I` from `d²` free entries.
fn spd(d: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |x| {
        let l = Matrix::from_row_slice(d, d, &x);
        linalg::symmetrized(&l * l.transpose() + Matrix::identity(d, d) * 0.2)
    })
}

fn history(d: usize, max_len: usize) -> impl Strategy<Value = Vec<HistoryEntry>> {
    prop::collection::vec((vec_of(d), -3.0f64..3.0), 1..max_len).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(t, (b, r))| HistoryEntry {
                round: t + 1,
                pulled: Pull::Arm(0),
                context: Vector::from_vec(b),
                reward: r,
            })
            .collect()
    })
}

fn reversed(h: &[HistoryEntry]) -> Vec<HistoryEntry> {
    h.iter().rev().cloned().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn argmax_arm_has_zero_regret(
        d in 1usize..5,
        k in 1usize..8,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arms: Vec<Vector> = (0..k).map(|_| Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))).collect();
        let mu = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let ctx = RoundContexts::new(arms, 1).unwrap();
        let best = ctx.best_arm(&mu);
        prop_assert_eq!(instant_regret(&BanditInstance::new(mu.clone()), &ctx, best).unwrap(), 0.0);
        for i in 0..k {
            prop_assert!(instant_regret(&BanditInstance::new(mu.clone()), &ctx, i).unwrap() >= 0.0);
        }
    }

    #[test]
    fn posterior_independent_of_update_order(
        (cov, mean, h) in (1usize..5).prop_flat_map(|d| (spd(d), vec_of(d), history(d, 30)))
    ) {
        let prior = GaussianBelief::new(Vector::from_vec(mean), cov, 0.5).unwrap();
        let run = |h: &[HistoryEntry]| {
            h.iter().fold(ts_init(&prior).unwrap(), |s, e| ts_update(&s, &e.context, e.reward).unwrap())
        };
        let a = run(&h);
        let b = run(&reversed(&h));
        prop_assert!(linalg::max_abs_diff(a.precision(), b.precision()) <= 1e-9);
        prop_assert!(linalg::max_abs_diff_vec(a.mean(), b.mean()) <= 1e-9);
    }

    #[test]
    fn lambda_min_never_decreases(
        (cov, mean, h) in (1usize..5).prop_flat_map(|d| (spd(d), vec_of(d), history(d, 40)))
    ) {
        let prior = GaussianBelief::new(Vector::from_vec(mean), cov, 0.5).unwrap();
        let mut state = ts_init(&prior).unwrap();
        let mut prev = linalg::lambda_min(state.precision());
        for e in &h {
            state = ts_update(&state, &e.context, e.reward).unwrap();
            let now = linalg::lambda_min(state.precision());
            prop_assert!(now >= prev * (1.0 - 1e-12) - 1e-12, "{} < {}", now, prev);
            prev = now;
        }
    }

    #[test]
    fn meta_update_independent_of_history_order(
        (sq, ss, mean, h) in (1usize..4).prop_flat_map(|d| (spd(d), spd(d), vec_of(d), history(d, 20)))
    ) {
        let q = MetaPosterior::new(GaussianBelief::new(Vector::from_vec(mean), sq, 0.3).unwrap());
        let a = meta_posterior_update(&q, &ss, &h).unwrap();
        let b = meta_posterior_update(&q, &ss, &reversed(&h)).unwrap();
        prop_assert!(linalg::max_abs_diff(a.belief.cov_core(), b.belief.cov_core()) <= 1e-9);
        prop_assert!(linalg::max_abs_diff_vec(a.belief.mean(), b.belief.mean()) <= 1e-9);
        prop_assert_eq!(linalg::asymmetry(a.belief.cov_core()), 0.0);
    }

    #[test]
    fn bank_weights_normalized_and_permutation_equivariant(
        (means, h, raw_w, shift) in (1usize..4).prop_flat_map(|d| (
            prop::collection::vec(vec_of(d), 2..6),
            history(d, 15),
            prop::collection::vec(0.05f64..1.0, 6),
            0usize..6,
        ))
    ) {
        let l = means.len();
        let d = means[0].len();
        let priors: Vec<GaussianBelief> = means
            .iter()
            .map(|m| GaussianBelief::new(Vector::from_vec(m.clone()), Matrix::identity(d, d), 0.4).unwrap())
            .collect();
        let total: f64 = raw_w[..l].iter().sum();
        let weights: Vec<f64> = raw_w[..l].iter().map(|w| w / total).collect();
        let bank = PriorBank::new(priors.clone(), weights.clone()).unwrap();
        let post = finite_prior_update(&bank, &h).unwrap();
        let sum: f64 = post.weights().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(post.weights().iter().all(|w| *w >= 0.0));

        let perm: Vec<usize> = (0..l).map(|i| (i + shift) % l).collect();
        let bank2 = PriorBank::new(
            perm.iter().map(|&i| priors[i].clone()).collect(),
            perm.iter().map(|&i| weights[i]).collect(),
        ).unwrap();
        let post2 = finite_prior_update(&bank2, &h).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((post2.weights()[j] - post.weights()[i]).abs() <= 1e-12);
        }
        let sel = finite_prior_select(&post);
        prop_assert!(post.weights().iter().all(|w| *w <= post.weights()[sel]));
    }

    #[test]
    fn lp_argmax_is_feasible_and_beats_random_points(
        d in 2usize..4,
        rows in 2usize..8,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poly = Polyhedron::random(&mut rng, rows, d, 50.0);
        let c = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let x = lp_argmax(&poly, &c).unwrap();
        prop_assert!(poly.contains(&x, 1e-7));
        let best = c.dot(&x);
        for _ in 0..200 {
            let p = Vector::from_fn(d, |_, _| rng.random_range(-50.0..50.0));
            if poly.contains(&p, 0.0) {
                prop_assert!(c.dot(&p) <= best + 1e-9);
            }
        }
    }
}
