#![allow(dead_code)]

use impute_ate::{Arm, Dataset, KernelFamily, NeighborSearch, SmootherSpec};
use impute_ate::smoothers::{BandwidthSpec, ForestSpec, WnnSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Uniform covariates, fair coin treatment with at least `min_arm` units per
/// arm, smooth nonlinear outcomes plus noise.
pub fn random_dataset(n: usize, d: usize, min_arm: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let cov: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
        let arms: Vec<Arm> = (0..n)
            .map(|_| if rng.random::<bool>() { Arm::Treated } else { Arm::Control })
            .collect();
        let n1 = arms.iter().filter(|a| **a == Arm::Treated).count();
        if n1 < min_arm || n - n1 < min_arm {
            continue;
        }
        let y = (0..n)
            .map(|i| {
                let x = &cov[i * d..(i + 1) * d];
                let z: f64 = rng.sample(StandardNormal);
                (3.0 * x[0]).sin() + x.iter().sum::<f64>().powi(2) + arms[i].flag() as f64 * (1.0 + x[d - 1])
                    + 0.5 * z
            })
            .collect();
        return Dataset::from_parts(d, cov, arms, y).unwrap();
    }
}

pub fn kernel_default() -> SmootherSpec {
    SmootherSpec::kernel(BandwidthSpec::default(), KernelFamily::Gaussian, NeighborSearch::BruteForce)
}

pub fn kernel_fast(scale: f64) -> SmootherSpec {
    SmootherSpec::kernel(
        BandwidthSpec {
            bandwidth_scale: scale,
            ..Default::default()
        },
        KernelFamily::EpanechnikovProduct,
        NeighborSearch::KdTree,
    )
}

pub fn local_linear_default() -> SmootherSpec {
    SmootherSpec::local_linear(BandwidthSpec::default(), KernelFamily::Gaussian, NeighborSearch::BruteForce)
}

pub fn wnn_rate() -> SmootherSpec {
    SmootherSpec::wnn(WnnSpec {
        search: NeighborSearch::KdTree,
        ..Default::default()
    })
}

pub fn wnn_uniform(m: usize) -> SmootherSpec {
    SmootherSpec::wnn(WnnSpec::uniform(m))
}

pub fn forest_default() -> SmootherSpec {
    SmootherSpec::forest(ForestSpec::default())
}
