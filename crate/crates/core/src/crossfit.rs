//! N-fold cross-fitted estimator.
//!
//! For fold `k`, the adjuster is fit on out-of-fold units and each in-fold
//! unit `i` receives the column sum `sum_j w(j <- i, k)` over out-of-fold
//! opposite-arm units `j`, where the weights come from the smoother run on
//! `{i}` plus the out-of-fold sample.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{assemble, influence_variance, variance_estimate, AipwComponents, AteEstimate, MethodDescriptor};
use crate::forest::build_forest_unchecked;
use crate::neighbors::{Neighbor, NeighborSearch};
use crate::numeric::{derive_seed, mix64, ordered_sum, squared_distance};
use crate::outcome::AdjusterSpec;
use crate::smoothers::{
    ArmNeighbors, BandwidthSpec, ForestSpec, KernelEvaluator, KernelFamily, LocalFit, SmootherParams, SmootherSpec,
    WnnSpec,
};

const FOLD_STREAM: u64 = 0x666f_6c64;
const INCLUDE_STREAM: u64 = 0x696e_636c;

/// Which nuisances enter the cross-fit variance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossFitVariance {
    /// Full-sample weights and adjuster.
    #[default]
    FullSample,
    /// Each unit's own fold adjuster and cross-fit column sum.
    FoldWise,
}

/// Random partition of `0..n` into `folds` groups whose sizes differ by at
/// most one. Each fold is sorted ascending.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidParameter("cross-fitting needs at least 2 folds".into()));
    }
    if folds > n {
        return Err(Error::InvalidParameter(format!("{folds} folds for {n} units")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[FOLD_STREAM])));
    Ok((0..folds)
        .map(|k| {
            let mut f = order[k * n / folds..(k + 1) * n / folds].to_vec();
            f.sort_unstable();
            f
        })
        .collect())
}

/// Cross-fitted estimate with a seeded random partition.
pub fn estimate_ate_crossfit(
    ds: &Dataset,
    smoother: &SmootherSpec,
    adjuster: &AdjusterSpec,
    folds: usize,
    seed: u64,
    variance: CrossFitVariance,
) -> Result<AteEstimate> {
    let parts = fold_assignment(ds.n(), folds, seed)?;
    estimate_ate_crossfit_with_folds(ds, smoother, adjuster, &parts, seed, variance)
}

/// Cross-fitted estimate for an explicit partition.
pub fn estimate_ate_crossfit_with_folds(
    ds: &Dataset,
    smoother: &SmootherSpec,
    adjuster: &AdjusterSpec,
    folds: &[Vec<usize>],
    seed: u64,
    variance: CrossFitVariance,
) -> Result<AteEstimate> {
    let n = ds.n();
    check_partition(n, folds)?;
    let mut terms = vec![0.0; n];
    let mut comp = AipwComponents {
        tau_reg: 0.0,
        treated_residual_term: 0.0,
        control_residual_term: 0.0,
        unnormalized_bias_term: 0.0,
    };
    let mut fold_estimates = Vec::with_capacity(folds.len());
    let mut descriptor = None;
    for (k, fold) in folds.iter().enumerate() {
        let fold_err = |e: Error| Error::Fold {
            fold: k + 1,
            message: e.to_string(),
        };
        let mut mask = vec![false; n];
        for &i in fold {
            mask[i] = true;
        }
        let om = adjuster.fit(ds, Some(&mask)).map_err(fold_err)?;
        let cs = crossfit_col_sums(ds, smoother, fold, derive_seed(seed, &[k as u64])).map_err(fold_err)?;
        let mut fold_sum = 0.0;
        for (&i, &c) in fold.iter().zip(&cs) {
            let x = ds.x(i);
            let arm = ds.arm(i);
            let reg = om.predict(Arm::Treated, x) - om.predict(Arm::Control, x);
            let resid = (1.0 + c) * (ds.y(i) - om.predict(arm, x));
            comp.tau_reg += reg;
            match arm {
                Arm::Treated => comp.treated_residual_term += resid,
                Arm::Control => comp.control_residual_term += resid,
            }
            terms[i] = reg + arm.sign() * resid;
            fold_sum += terms[i];
        }
        fold_estimates.push(fold_sum / fold.len() as f64);
        descriptor.get_or_insert_with(|| om.descriptor().clone());
    }
    let nf = n as f64;
    comp.tau_reg /= nf;
    comp.treated_residual_term /= nf;
    comp.control_residual_term /= nf;
    let tau = folds
        .iter()
        .zip(&fold_estimates)
        .map(|(f, t)| f.len() as f64 * t)
        .sum::<f64>()
        / nf;
    let sigma2 = match variance {
        CrossFitVariance::FullSample => {
            let sm = smoother.build(ds, seed)?;
            let om = adjuster.fit(ds, None)?;
            variance_estimate(ds, &sm, &om, tau)
        }
        CrossFitVariance::FoldWise => influence_variance(&terms, tau),
    };
    let mut adj = descriptor.expect("at least two folds");
    adj.fit_sample = "out-of-fold".into();
    Ok(assemble(
        n,
        tau,
        comp,
        sigma2,
        MethodDescriptor {
            smoother: smoother.name().into(),
            adjuster: adj,
            mode: format!("crossfit-{}", folds.len()),
        },
        Some(fold_estimates),
    ))
}

fn check_partition(n: usize, folds: &[Vec<usize>]) -> Result<()> {
    if folds.len() < 2 {
        return Err(Error::InvalidParameter("cross-fitting needs at least 2 folds".into()));
    }
    let mut seen = vec![false; n];
    for (k, f) in folds.iter().enumerate() {
        if f.is_empty() {
            return Err(Error::Fold {
                fold: k + 1,
                message: "empty fold".into(),
            });
        }
        for &i in f {
            if i >= n || seen[i] {
                return Err(Error::InvalidParameter(format!("folds are not a partition of 1..={n}")));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidParameter(format!("folds do not cover 1..={n}")));
    }
    Ok(())
}

/// The units outside `fold`, as a dataset, with the map back to `ds` indices.
fn out_of_fold(ds: &Dataset, fold: &[usize]) -> Result<(Dataset, Vec<usize>)> {
    let mut mask = vec![false; ds.n()];
    for &i in fold {
        mask[i] = true;
    }
    let ids: Vec<usize> = (0..ds.n()).filter(|&i| !mask[i]).collect();
    let mut cov = Vec::with_capacity(ids.len() * ds.d());
    for &i in &ids {
        cov.extend_from_slice(ds.x(i));
    }
    let sub = Dataset::from_parts(
        ds.d(),
        cov,
        ids.iter().map(|&i| ds.arm(i)).collect(),
        ids.iter().map(|&i| ds.y(i)).collect(),
    )?;
    Ok((sub, ids))
}

/// Cross-fit column sums for the units of `fold`, in fold order.
pub fn crossfit_col_sums(ds: &Dataset, smoother: &SmootherSpec, fold: &[usize], seed: u64) -> Result<Vec<f64>> {
    let (sub, ids) = out_of_fold(ds, fold)?;
    match smoother.params() {
        SmootherParams::Kernel(b, k, s) => kernel_cs(ds, &sub, fold, &b, k, s),
        SmootherParams::LocalLinear(b, k, s) => local_linear_cs(ds, &sub, fold, &b, k, s),
        SmootherParams::Wnn(w) => wnn_cs(ds, &sub, &ids, fold, &w),
        SmootherParams::Forest(f) => forest_cs(ds, &sub, fold, &f, seed),
    }
}

fn kernel_cs(
    ds: &Dataset,
    sub: &Dataset,
    fold: &[usize],
    bw: &BandwidthSpec,
    kernel: KernelFamily,
    search: NeighborSearch,
) -> Result<Vec<f64>> {
    let h = bw.resolve(sub.n() + 1, ds.d())?;
    let eval = KernelEvaluator::new(sub, &h, kernel, search)?;
    // Denominator of row j without the added unit.
    let base: Vec<f64> = (0..sub.n())
        .map(|j| {
            let mut v: Vec<f64> = eval
                .support(sub.x(j), sub.arm(j).opposite())
                .into_iter()
                .map(|(_, k)| k)
                .collect();
            ordered_sum(&mut v)
        })
        .collect();
    Ok(fold
        .iter()
        .map(|&i| {
            let mut terms: Vec<f64> = eval
                .support(ds.x(i), ds.arm(i).opposite())
                .into_iter()
                .map(|(j, k)| k / (k + base[j]))
                .collect();
            ordered_sum(&mut terms)
        })
        .collect())
}

fn local_linear_cs(
    ds: &Dataset,
    sub: &Dataset,
    fold: &[usize],
    bw: &BandwidthSpec,
    kernel: KernelFamily,
    search: NeighborSearch,
) -> Result<Vec<f64>> {
    let d = ds.d();
    let h = bw.resolve(sub.n() + 1, d)?;
    let eval = KernelEvaluator::new(sub, &h, kernel, search)?;
    struct RowBase {
        gram: Vec<f64>,
        mass: f64,
        count: usize,
    }
    let base: Vec<RowBase> = (0..sub.n())
        .map(|j| {
            let x = sub.x(j);
            let supp = eval.support(x, sub.arm(j).opposite());
            let mut ks: Vec<f64> = supp.iter().map(|&(_, k)| k).collect();
            RowBase {
                gram: LocalFit::gram(sub, x, &supp),
                mass: ordered_sum(&mut ks),
                count: supp.len(),
            }
        })
        .collect();
    fold.iter()
        .map(|&i| {
            let xi = ds.x(i);
            let mut terms = Vec::new();
            for (j, k) in eval.support(xi, ds.arm(i).opposite()) {
                let row = &base[j];
                let xj = sub.x(j);
                let w = if row.count + 1 < d + 1 {
                    k / (k + row.mass)
                } else {
                    let mut g = row.gram.clone();
                    LocalFit::add_point(&mut g, xj, xi, k);
                    let v = LocalFit::solve_first_column(&g, d + 1).ok_or(Error::SingularSystem { unit: i + 1 })?;
                    LocalFit::weight(&v, xj, xi, k)
                };
                terms.push(w);
            }
            Ok(ordered_sum(&mut terms))
        })
        .collect()
}

fn wnn_cs(ds: &Dataset, sub: &Dataset, ids: &[usize], fold: &[usize], spec: &WnnSpec) -> Result<Vec<f64>> {
    let gamma = spec.resolve(sub.n() + 1)?;
    let m = gamma.m();
    for arm in [Arm::Control, Arm::Treated] {
        if fold.iter().any(|&i| ds.arm(i) == arm) && sub.n_arm(arm) + 1 < m {
            return Err(Error::TooFewNeighbors {
                unit: fold.iter().find(|&&i| ds.arm(i) == arm).unwrap() + 1,
                needed: m,
                available: sub.n_arm(arm) + 1,
            });
        }
    }
    let nn = ArmNeighbors::new(sub, spec.search);
    // Each out-of-fold unit's M nearest opposite-arm units, keyed by original index.
    let lists: Vec<Vec<Neighbor>> = (0..sub.n())
        .map(|j| {
            nn.knn(sub.x(j), sub.arm(j).opposite(), m)
                .into_iter()
                .map(|nb| Neighbor {
                    dist2: nb.dist2,
                    id: ids[nb.id],
                })
                .collect()
        })
        .collect();
    Ok(fold
        .iter()
        .map(|&i| {
            let mut terms = Vec::new();
            for &j in sub.units(ds.arm(i).opposite()) {
                let key = Neighbor {
                    dist2: squared_distance(sub.x(j), ds.x(i)),
                    id: i,
                };
                let rank = lists[j].iter().filter(|nb| **nb < key).count();
                if rank < m {
                    terms.push(gamma.weights()[rank]);
                }
            }
            ordered_sum(&mut terms)
        })
        .collect())
}

fn forest_cs(ds: &Dataset, sub: &Dataset, fold: &[usize], spec: &ForestSpec, seed: u64) -> Result<Vec<f64>> {
    let cfg = spec.resolve(sub.n0(), sub.n1(), seed)?;
    let mut out = vec![0.0; fold.len()];
    for arm in [Arm::Control, Arm::Treated] {
        let members: Vec<usize> = (0..fold.len()).filter(|&q| ds.arm(fold[q]) == arm).collect();
        if members.is_empty() {
            continue;
        }
        let forest = build_forest_unchecked(sub, arm, &cfg);
        let m = sub.n_arm(arm) as f64;
        let p_incl = cfg.s as f64 / (m + 1.0);
        let b_count = forest.trees().len() as f64;
        for (b, tree) in forest.trees().iter().enumerate() {
            let mut opp_in_leaf = vec![0usize; tree.leaves().len()];
            for &j in sub.units(arm.opposite()) {
                opp_in_leaf[tree.leaf_index(sub.x(j))] += 1;
            }
            for &q in &members {
                let i = fold[q];
                let u = (mix64(derive_seed(cfg.seed, &[INCLUDE_STREAM, arm.flag() as u64, b as u64, i as u64])) >> 11)
                    as f64
                    * (1.0 / (1u64 << 53) as f64);
                if u >= p_incl {
                    continue;
                }
                let leaf = tree.leaf_index(ds.x(i));
                let size = tree.leaves()[leaf].members.len() as f64 + 1.0;
                out[q] += opp_in_leaf[leaf] as f64 / size;
            }
        }
        for &q in &members {
            out[q] /= b_count;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_dataset;

    #[test]
    fn folds_partition_and_balance() {
        let f = fold_assignment(11, 3, 9).unwrap();
        let sizes: Vec<usize> = f.iter().map(|v| v.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_eq!(f, fold_assignment(11, 3, 9).unwrap());
        assert!(fold_assignment(5, 1, 0).is_err());
    }

    #[test]
    fn degenerate_hand_case() {
        // 1-NN on 4 units, intercept-only adjuster, folds {0,1} / {2,3}.
        let ds = load_dataset(vec![
            (vec![0.0], 1, 5.0),
            (vec![1.0], 0, 1.0),
            (vec![0.1], 0, 2.0),
            (vec![0.9], 1, 7.0),
        ])
        .unwrap();
        let folds = vec![vec![0, 1], vec![2, 3]];
        let est = estimate_ate_crossfit_with_folds(
            &ds,
            &SmootherSpec::wnn(WnnSpec::uniform(1)),
            &AdjusterSpec::Polynomial { degree: 0 },
            &folds,
            0,
            CrossFitVariance::FoldWise,
        )
        .unwrap();
        // Fold 1 (mu1 = 7, mu0 = 2): unit 0 is the nearest treated point of
        // control 2, term 5 + 2*(5-7) = 1; unit 1 is the nearest control of
        // treated 3, term 5 - 2*(1-2) = 7.
        // Fold 2 (mu1 = 5, mu0 = 1): unit 2 is matched by treated 0, term
        // 4 - 2*(2-1) = 2; unit 3 is matched by control 1, term 4 + 2*(7-5) = 8.
        assert_eq!(est.fold_estimates.as_ref().unwrap(), &vec![4.0, 5.0]);
        assert_eq!(est.tau_hat, 4.5);
        assert!((est.components.reassemble() - est.tau_hat).abs() < 1e-12);
    }
}
