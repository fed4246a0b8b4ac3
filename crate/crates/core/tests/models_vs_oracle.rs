use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use syncfv::benchmarks;
use syncfv::engine::{run_fv, Batch, FVConfig};
use syncfv::models::{CtmcModel, ProcessModel, TestFunction};
use syncfv::oracle::{survival_probability, Oracle};

#[test]
fn two_state_death_fraction_matches_survival() {
    let model = benchmarks::two_state_model();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples = 100_000;
    let dead = (0..samples)
        .filter(|_| {
            let x = model.sample_initial(&mut rng);
            let seg = model.advance_with_skeleton(&x, 0.0, 1.0, &mut rng).unwrap();
            !seg.survived()
        })
        .count() as f64
        / samples as f64;
    let q = 1.0 - survival_probability(&model, 1.0).unwrap();
    let se = (q * (1.0 - q) / samples as f64).sqrt();
    assert!((dead - q).abs() <= 3.0 * se, "{dead} vs {q}");
}

#[test]
fn quantile_grid_of_pure_death() {
    let b = benchmarks::pure_death();
    let o = Oracle::new(&b.model, b.theta, b.horizon).unwrap();
    let g = o.grid();
    assert_eq!(g.j_max, 4);
    assert!((g.r - 0.796594).abs() < 1e-6);
    for (j, t) in g.t_levels.iter().enumerate() {
        assert!((t - (j + 1) as f64 * std::f64::consts::LN_2).abs() < 1e-11);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Estimators stay in range and the books balance on random chains.
    #[test]
    fn run_invariants(seed in any::<u64>(), n_states in 2usize..6, theta in 0.2f64..0.9, n in 10usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = CtmcModel::random(n_states, &mut rng).unwrap();
        let tfs = [TestFunction::indicator(), model.test_function("index").unwrap()];
        let config = FVConfig::new(n, Batch::Theta(theta), 1.5, seed).unwrap();
        let rec = run_fv(&config, &model, &tfs).unwrap();
        let k = config.batch_size();
        prop_assert!(rec.p_hat >= 0.0 && rec.p_hat <= 1.0);
        prop_assert_eq!(rec.gamma_hat["one"], rec.p_hat);
        prop_assert_eq!(rec.cost_segments, (n + k * rec.resample_count) as u64);
        prop_assert!(rec.gamma_hat["index"] <= (n_states - 1) as f64 * rec.p_hat + 1e-12);
        if let Some(eta) = rec.eta_norm_hat["index"] {
            prop_assert!((0.0..=(n_states - 1) as f64 + 1e-12).contains(&eta));
        }
    }

    /// The exact variance is never negative and the classical one is at
    /// least the minimal relative variance `-log p_T` times `p_T²`.
    #[test]
    fn oracle_variances_are_consistent(seed in any::<u64>(), theta in 0.2f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = CtmcModel::random(4, &mut rng).unwrap();
        let o = Oracle::new(&model, theta, 2.0).unwrap();
        let p = o.grid().p_t;
        let ones = [1.0; 4];
        prop_assert!(o.sigma2_sync(&ones).unwrap() >= 0.0);
        let c = o.sigma2_classical(&ones).unwrap();
        prop_assert!(c >= p * p * -p.ln() * (1.0 - 1e-9));
    }
}
