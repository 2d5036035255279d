use nalgebra::{DMatrix, DVector};

use super::{per_unit, BandwidthMatrix, KernelEvaluator, KernelFamily, SmoothingMatrix};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::neighbors::NeighborSearch;
use crate::numeric::ordered_sum;

/// Residual tolerance on `G v = e_1` before the ridge retry kicks in.
const SOLVE_TOL: f64 = 1e-10;

/// Closed-form pieces of a local linear fit at one query point.
pub(crate) struct LocalFit;

impl LocalFit {
    /// `B^T W B` with rows `b_j = (1, X_j - x)`, row-major `(d+1) x (d+1)`.
    ///
    /// Each entry is an order-independent sum over the support.
    pub fn gram(ds: &Dataset, x: &[f64], support: &[(usize, f64)]) -> Vec<f64> {
        let p = ds.d() + 1;
        let mut g = vec![0.0; p * p];
        let mut terms = Vec::with_capacity(support.len());
        for a in 0..p {
            for b in a..p {
                terms.clear();
                terms.extend(support.iter().map(|&(j, k)| {
                    let xj = ds.x(j);
                    let ba = if a == 0 { 1.0 } else { xj[a - 1] - x[a - 1] };
                    let bb = if b == 0 { 1.0 } else { xj[b - 1] - x[b - 1] };
                    k * ba * bb
                }));
                let s = ordered_sum(&mut terms);
                g[a * p + b] = s;
                g[b * p + a] = s;
            }
        }
        g
    }

    /// Adds `k b b^T` for `b = (1, x_new - x)`.
    pub fn add_point(gram: &mut [f64], x: &[f64], x_new: &[f64], k: f64) {
        let p = x.len() + 1;
        let b = |a: usize| if a == 0 { 1.0 } else { x_new[a - 1] - x[a - 1] };
        for a in 0..p {
            for c in 0..p {
                gram[a * p + c] += k * b(a) * b(c);
            }
        }
    }

    /// `v = G^{-1} e_1`; retries with ridge `1e-10 * tr(G) / (d+1)` if the
    /// plain solve fails or leaves a residual above tolerance.
    pub fn solve_first_column(gram: &[f64], p: usize) -> Option<Vec<f64>> {
        let g = DMatrix::from_row_slice(p, p, gram);
        let mut e1 = DVector::zeros(p);
        e1[0] = 1.0;
        let attempt = |m: &DMatrix<f64>| -> Option<DVector<f64>> {
            let v = m.clone().cholesky()?.solve(&e1);
            if v.iter().any(|c| !c.is_finite()) {
                return None;
            }
            let resid = (&g * &v - &e1).amax();
            (resid <= SOLVE_TOL).then_some(v)
        };
        if let Some(v) = attempt(&g) {
            return Some(v.iter().copied().collect());
        }
        let lambda = 1e-10 * g.trace() / p as f64;
        let ridged = &g + DMatrix::identity(p, p) * lambda;
        let v = ridged.cholesky()?.solve(&e1);
        if v.iter().any(|c| !c.is_finite()) {
            return None;
        }
        // Ridge shifts the row sum by O(lambda); accept a looser residual.
        let resid = (&g * &v - &e1).amax();
        (resid <= 1e-6).then(|| v.iter().copied().collect())
    }

    /// `e_1^T G^{-1} b_j K_j` given `v = G^{-1} e_1`.
    pub fn weight(v: &[f64], x: &[f64], xj: &[f64], k: f64) -> f64 {
        let mut s = v[0];
        for p in 0..x.len() {
            s += v[p + 1] * (xj[p] - x[p]);
        }
        k * s
    }
}

/// Local linear matching weights. Units whose kernel support holds fewer than
/// `d + 1` opposite-arm points get Nadaraya-Watson weights and a fallback flag.
pub fn local_linear_weights(
    ds: &Dataset,
    h: &BandwidthMatrix,
    kernel: KernelFamily,
    search: NeighborSearch,
) -> Result<SmoothingMatrix> {
    let d = ds.d();
    for arm in [crate::data::Arm::Control, crate::data::Arm::Treated] {
        if ds.n_arm(arm) < d + 1 {
            return Err(Error::TooFewNeighbors {
                unit: ds.units(arm.opposite())[0] + 1,
                needed: d + 1,
                available: ds.n_arm(arm),
            });
        }
    }
    let eval = KernelEvaluator::new(ds, h, kernel, search)?;
    let rows = per_unit(ds.n(), |i| {
        let x = ds.x(i);
        let support = eval.support(x, ds.arm(i).opposite());
        if support.len() < d + 1 {
            let mut terms: Vec<f64> = support.iter().map(|&(_, k)| k).collect();
            let denom = ordered_sum(&mut terms);
            if denom <= 0.0 {
                return Err(Error::StarvedUnit { unit: i + 1 });
            }
            return Ok((support.into_iter().map(|(j, k)| (j, k / denom)).collect(), true));
        }
        let gram = LocalFit::gram(ds, x, &support);
        let v = LocalFit::solve_first_column(&gram, d + 1).ok_or(Error::SingularSystem { unit: i + 1 })?;
        let row = support
            .into_iter()
            .map(|(j, k)| (j, LocalFit::weight(&v, x, ds.x(j), k)))
            .collect();
        Ok((row, false))
    })?;
    SmoothingMatrix::from_row_results(ds, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_dataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reproduces_linear_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = Vec::new();
        for _ in 0..30 {
            let x = rng.random::<f64>();
            rows.push((vec![x], 0, 2.0 + 3.0 * x));
        }
        for _ in 0..10 {
            rows.push((vec![0.1 + 0.8 * rng.random::<f64>()], 1, 0.0));
        }
        let ds = load_dataset(rows).unwrap();
        let h = BandwidthMatrix::isotropic(1, 0.15).unwrap();
        for fam in [KernelFamily::Gaussian, KernelFamily::EpanechnikovProduct] {
            let sm = local_linear_weights(&ds, &h, fam, NeighborSearch::BruteForce).unwrap();
            for &i in ds.units(crate::data::Arm::Treated) {
                let imputed: f64 = sm.row(i).map(|(j, w)| w * ds.y(j)).sum();
                assert!((imputed - (2.0 + 3.0 * ds.x(i)[0])).abs() < 1e-8);
                assert!((sm.row_sum()[i] - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rows: Vec<_> = (0..10)
            .map(|i| (vec![rng.random::<f64>(), rng.random::<f64>()], (i % 2) as u8, 0.0))
            .collect();
        let ds = load_dataset(rows).unwrap();
        let h = BandwidthMatrix::isotropic(2, 0.5).unwrap();
        let sm = local_linear_weights(&ds, &h, KernelFamily::Gaussian, NeighborSearch::BruteForce).unwrap();
        // Oracle: dense weighted least squares, hat row e1^T (B^T W B)^{-1} B^T W via full inverse.
        for i in 0..10 {
            let opp: Vec<usize> = (0..10).filter(|&j| j % 2 != i % 2).collect();
            let b = DMatrix::from_fn(opp.len(), 3, |r, c| {
                if c == 0 {
                    1.0
                } else {
                    ds.x(opp[r])[c - 1] - ds.x(i)[c - 1]
                }
            });
            let w = DMatrix::from_diagonal(&DVector::from_iterator(
                opp.len(),
                opp.iter().map(|&j| {
                    let r2 = (ds.x(j)[0] - ds.x(i)[0]).powi(2) + (ds.x(j)[1] - ds.x(i)[1]).powi(2);
                    (-r2 / (2.0 * 0.25)).exp() / (2.0 * std::f64::consts::PI * 0.25)
                }),
            ));
            let hat = (b.transpose() * &w * &b).try_inverse().unwrap() * b.transpose() * &w;
            for (r, &j) in opp.iter().enumerate() {
                assert!((sm.get(i, j) - hat[(0, r)]).abs() < 1e-9, "({i},{j})");
            }
        }
    }

    #[test]
    fn sparse_support_falls_back_to_nadaraya_watson() {
        // Treated unit at 0 sees only one control inside the compact support.
        let ds = load_dataset(vec![
            (vec![0.0], 1, 0.0),
            (vec![0.05], 0, 1.0),
            (vec![3.0], 0, 2.0),
            (vec![3.1], 1, 0.0),
            (vec![3.2], 0, 2.0),
        ])
        .unwrap();
        let h = BandwidthMatrix::isotropic(1, 0.5).unwrap();
        let sm = local_linear_weights(&ds, &h, KernelFamily::EpanechnikovProduct, NeighborSearch::BruteForce).unwrap();
        assert!(sm.fallback_flags()[0]);
        assert_eq!(sm.get(0, 1), 1.0);
        assert!(sm.fallback_count() >= 1);
    }

    #[test]
    fn too_small_opposite_arm() {
        let ds = load_dataset(vec![(vec![0.0, 0.0], 1, 0.0), (vec![1.0, 0.0], 0, 0.0), (vec![0.0, 1.0], 0, 0.0)]).unwrap();
        let h = BandwidthMatrix::isotropic(2, 1.0).unwrap();
        assert!(matches!(
            local_linear_weights(&ds, &h, KernelFamily::Gaussian, NeighborSearch::BruteForce),
            Err(Error::TooFewNeighbors { .. })
        ));
    }

    #[test]
    fn collinear_support_uses_ridge_or_reports_unit() {
        // Controls on a line in 2-d: B^T W B is singular.
        let mut rows = vec![(vec![0.5, 0.5], 1, 0.0)];
        for k in 0..6 {
            let t = k as f64 / 5.0;
            rows.push((vec![t, t], 0, 0.0));
        }
        rows.push((vec![0.2, 0.9], 1, 0.0));
        rows.push((vec![0.9, 0.1], 1, 0.0));
        let ds = load_dataset(rows).unwrap();
        let h = BandwidthMatrix::isotropic(2, 0.5).unwrap();
        match local_linear_weights(&ds, &h, KernelFamily::Gaussian, NeighborSearch::BruteForce) {
            Ok(sm) => assert!(sm.row(0).all(|(_, w)| w.is_finite())),
            Err(Error::SingularSystem { unit }) => assert!(unit >= 1),
            Err(e) => panic!("unexpected {e}"),
        }
    }
}
