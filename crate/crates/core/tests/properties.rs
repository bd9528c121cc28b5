use proptest::prelude::*;

use vpl_lab::autodiff::SeededRng;
use vpl_lab::harness::{generate_data, ExperimentConfig};
use vpl_lab::models::{
    beta_schedule, btl_likelihood, dpl_meanvar_likelihood, kl_diag_gaussians, ModelConfig, ModelKind, RewardModel,
};
use vpl_lab::policy::{goal_mask, spo_rewards, value_iteration_from};
use vpl_lab::types::LatentPosterior;
use vpl_lab::worlds::Gridworld;

fn vpl_model(dim: usize, seed: u64) -> RewardModel {
    RewardModel::new(ModelConfig::new(ModelKind::Vpl, dim).with_hidden(16).with_latent_dim(2), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn btl_is_antisymmetric_and_shift_free(a in -30.0f64..30.0, b in -30.0f64..30.0, c in -50.0f64..50.0) {
        let p = btl_likelihood(a, b).unwrap();
        prop_assert!((p + btl_likelihood(b, a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((p - btl_likelihood(a + c, b + c).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn probit_comparison_is_antisymmetric(
        ma in -5.0f64..5.0, mb in -5.0f64..5.0, sa in 0.01f64..3.0, sb in 0.01f64..3.0,
    ) {
        let p = dpl_meanvar_likelihood(ma, sa, mb, sb).unwrap();
        let q = dpl_meanvar_likelihood(mb, sb, ma, sa).unwrap();
        prop_assert!((p + q - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_itself(
        mq in prop::collection::vec(-3.0f64..3.0, 3),
        sq in prop::collection::vec(0.05f64..3.0, 3),
        mp in prop::collection::vec(-3.0f64..3.0, 3),
        sp in prop::collection::vec(0.05f64..3.0, 3),
    ) {
        let q = LatentPosterior { mean: mq, stddev: sq };
        let p = LatentPosterior { mean: mp, stddev: sp };
        prop_assert!(kl_diag_gaussians(&q, &p).unwrap() >= 0.0);
        prop_assert!(kl_diag_gaussians(&q, &q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_weight_stays_in_range(total in 1u64..5000, frac in 0.0f64..=1.0, beta in 0.0f64..2.0) {
        let step = ((total as f64) * frac) as u64;
        let w = beta_schedule(step, total, beta).unwrap();
        prop_assert!(w >= 0.0 && w <= beta + 1e-12);
    }

    #[test]
    fn value_iteration_forgets_its_initial_table(
        rewards in prop::collection::vec(-1.0f64..1.0, 25),
        init in prop::collection::vec(-20.0f64..20.0, 100),
    ) {
        let grid = Gridworld::open_grid(5, 5, &[(4, 4), (0, 4)]).unwrap();
        let absorbing = goal_mask(&grid);
        let zero = value_iteration_from(&grid, &rewards, &absorbing, 0.9, 1e-9, None).unwrap();
        let warm = value_iteration_from(&grid, &rewards, &absorbing, 0.9, 1e-9, Some(&init)).unwrap();
        for c in 0..grid.num_cells() {
            if grid.is_wall(c) {
                continue;
            }
            prop_assert!((zero.value(c) - warm.value(c)).abs() < 1e-7);
        }
    }

    #[test]
    fn spo_rewards_are_win_rates(seed in 0u64..1000, z in prop::collection::vec(-3.0f64..3.0, 2)) {
        let model = vpl_model(3, seed);
        let mut rng = SeededRng::new(seed);
        let states: Vec<Vec<f64>> = (0..12).map(|_| rng.normals(3)).collect();
        let comps: Vec<Vec<f64>> = (0..20).map(|_| rng.normals(3)).collect();
        for r in spo_rewards(&model, &states, &z, &comps).unwrap() {
            prop_assert!(r > 0.0 && r < 1.0);
        }
    }

    #[test]
    fn checkpoints_round_trip_bitwise(seed in 0u64..1000) {
        let model = vpl_model(4, seed);
        let restored = RewardModel::from_checkpoint(&model.to_checkpoint()).unwrap();
        let mut rng = SeededRng::new(seed ^ 7);
        let states: Vec<Vec<f64>> = (0..6).map(|_| rng.normals(4)).collect();
        let z = rng.normals(2);
        let a = model.rewards(&states, Some(&z)).unwrap();
        let b = restored.rewards(&states, Some(&z)).unwrap();
        prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn datasets_depend_only_on_the_seed(seed in 0u64..10_000, world in prop::sample::select(vec!["didactic", "pets", "maze2", "tidy"])) {
        let cfg = ExperimentConfig::for_world(world).unwrap().with_seed(seed);
        let (_, a) = generate_data(&cfg).unwrap();
        let (_, b) = generate_data(&cfg).unwrap();
        prop_assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
    }
}
