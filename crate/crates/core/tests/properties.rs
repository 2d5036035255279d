mod common;

use common::{kernel_default, local_linear_default, random_dataset, wnn_uniform};
use impute_ate::data::{permute, Permutation};
use impute_ate::{AdjusterSpec, EstimatorSpec, ModeSpec, SmootherSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(smoother: SmootherSpec, adjuster: AdjusterSpec) -> EstimatorSpec {
    EstimatorSpec {
        smoother,
        adjuster,
        mode: ModeSpec::Full,
    }
}

fn smoother(k: usize) -> SmootherSpec {
    match k {
        0 => kernel_default(),
        1 => wnn_uniform(3),
        _ => local_linear_default(),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shifting_all_outcomes_leaves_tau_unchanged(
        seed in 0u64..10_000, k in 0usize..3, c in -50.0f64..50.0, poly in any::<bool>(),
    ) {
        let ds = random_dataset(40, 2, 6, seed);
        let adj = if poly { AdjusterSpec::Polynomial { degree: 1 } } else { AdjusterSpec::Zero };
        let est = spec(smoother(k), adj);
        let shifted = ds.with_outcome(ds.outcome().iter().map(|y| y + c).collect()).unwrap();
        let a = est.run(&ds, 1).unwrap();
        let b = est.run(&shifted, 1).unwrap();
        prop_assert!(close(a.tau_hat, b.tau_hat), "{} vs {}", a.tau_hat, b.tau_hat);
    }

    #[test]
    fn constant_effect_shifts_tau(seed in 0u64..10_000, k in 0usize..3, c in -5.0f64..5.0) {
        let ds = random_dataset(40, 2, 6, seed);
        let est = spec(smoother(k), AdjusterSpec::Zero);
        let y = (0..ds.n()).map(|i| ds.y(i) + c * ds.arm(i).flag() as f64).collect();
        let a = est.run(&ds, 1).unwrap();
        let b = est.run(&ds.with_outcome(y).unwrap(), 1).unwrap();
        prop_assert!(close(b.tau_hat - a.tau_hat, c), "shift {} for c = {}", b.tau_hat - a.tau_hat, c);
    }

    // A linear prognostic term is absorbed exactly by the degree-1 adjuster.
    #[test]
    fn linear_adjuster_absorbs_linear_terms(
        seed in 0u64..10_000, k in 0usize..3, a0 in -3.0f64..3.0, b1 in -3.0f64..3.0, b2 in -3.0f64..3.0,
    ) {
        let ds = random_dataset(40, 2, 6, seed);
        let est = spec(smoother(k), AdjusterSpec::Polynomial { degree: 1 });
        let y = (0..ds.n()).map(|i| ds.y(i) + a0 + b1 * ds.x(i)[0] + b2 * ds.x(i)[1]).collect();
        let a = est.run(&ds, 1).unwrap();
        let b = est.run(&ds.with_outcome(y).unwrap(), 1).unwrap();
        prop_assert!(close(a.tau_hat, b.tau_hat), "{} vs {}", a.tau_hat, b.tau_hat);
    }

    #[test]
    fn estimate_is_invariant_to_row_order(seed in 0u64..10_000, k in 0usize..3, poly in any::<bool>()) {
        let ds = random_dataset(40, 2, 6, seed);
        let adj = if poly { AdjusterSpec::Polynomial { degree: 1 } } else { AdjusterSpec::Zero };
        let est = spec(smoother(k), adj);
        let p = Permutation::random(ds.n(), &mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc));
        let a = est.run(&ds, 1).unwrap();
        let b = est.run(&permute(&ds, &p).unwrap(), 1).unwrap();
        prop_assert!(close(a.tau_hat, b.tau_hat), "{} vs {}", a.tau_hat, b.tau_hat);
        prop_assert!(close(a.sigma2_hat, b.sigma2_hat), "{} vs {}", a.sigma2_hat, b.sigma2_hat);
    }
}
