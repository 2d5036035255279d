use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{per_unit, SmoothingMatrix};
use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::neighbors::{KdTree, NeighborSearch, PointSet};
use crate::numeric::ordered_sum;

/// Symmetric multivariate kernel densities with closed-form second moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
    EpanechnikovProduct,
    UniformBox,
}

impl KernelFamily {
    pub fn eval(self, z: &[f64]) -> f64 {
        match self {
            KernelFamily::Gaussian => {
                let d = z.len() as i32;
                let r2: f64 = z.iter().map(|v| v * v).sum();
                (2.0 * std::f64::consts::PI).powi(-d).sqrt() * (-0.5 * r2).exp()
            }
            KernelFamily::EpanechnikovProduct => z
                .iter()
                .map(|&v| if v.abs() <= 1.0 { 0.75 * (1.0 - v * v) } else { 0.0 })
                .product(),
            KernelFamily::UniformBox => z
                .iter()
                .map(|&v| if v.abs() <= 1.0 { 0.5 } else { 0.0 })
                .product(),
        }
    }

    /// Half-width of the support in every coordinate, `None` if unbounded.
    pub fn support_linf(self) -> Option<f64> {
        match self {
            KernelFamily::Gaussian => None,
            _ => Some(1.0),
        }
    }

    /// `mu_2(K)` with `int z z^T K(z) dz = mu_2(K) I`.
    pub fn mu2(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 1.0,
            KernelFamily::EpanechnikovProduct => 0.2,
            KernelFamily::UniformBox => 1.0 / 3.0,
        }
    }
}

/// Symmetric positive-definite bandwidth matrix `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthMatrix {
    d: usize,
    h: Vec<f64>,
    inv_sqrt: Vec<f64>,
    inv_sqrt_det: f64,
    diagonal: bool,
}

impl BandwidthMatrix {
    /// `H = h^2 I_d`.
    pub fn isotropic(d: usize, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth h must be positive, got {h}")));
        }
        let mut m = vec![0.0; d * d];
        for p in 0..d {
            m[p * d + p] = h * h;
        }
        Self::new(d, m)
    }

    /// `h = scale * n^(-1/(d+4))`.
    pub fn rate(n: usize, d: usize, scale: f64) -> Result<Self> {
        Self::isotropic(d, scale * (n as f64).powf(-1.0 / (d as f64 + 4.0)))
    }

    /// Validates a row-major `d x d` matrix.
    pub fn new(d: usize, h: Vec<f64>) -> Result<Self> {
        if d == 0 || h.len() != d * d {
            return Err(Error::InvalidParameter(format!("bandwidth matrix must be {d}x{d}")));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("bandwidth matrix has non-finite entries".into()));
        }
        for p in 0..d {
            for q in 0..p {
                if (h[p * d + q] - h[q * d + p]).abs() > 1e-12 {
                    return Err(Error::InvalidParameter("bandwidth matrix is not symmetric".into()));
                }
            }
        }
        let diagonal = (0..d).all(|p| (0..d).all(|q| p == q || h[p * d + q] == 0.0));
        let mut inv_sqrt = vec![0.0; d * d];
        let inv_sqrt_det;
        if diagonal {
            let mut det = 1.0;
            for p in 0..d {
                let v = h[p * d + p];
                if v <= 0.0 {
                    return Err(Error::InvalidParameter("bandwidth matrix is not positive definite".into()));
                }
                inv_sqrt[p * d + p] = 1.0 / v.sqrt();
                det *= v.sqrt();
            }
            inv_sqrt_det = 1.0 / det;
        } else {
            let m = DMatrix::from_row_slice(d, d, &h);
            let eig = m.symmetric_eigen();
            if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
                return Err(Error::InvalidParameter("bandwidth matrix is not positive definite".into()));
            }
            let inv_root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
            let a = &eig.eigenvectors * inv_root * eig.eigenvectors.transpose();
            for p in 0..d {
                for q in 0..d {
                    inv_sqrt[p * d + q] = a[(p, q)];
                }
            }
            inv_sqrt_det = eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()).product();
        }
        Ok(BandwidthMatrix {
            d,
            h,
            inv_sqrt,
            inv_sqrt_det,
            diagonal,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &[f64] {
        &self.h
    }

    /// `H^{-1/2} v`, written into `out`.
    pub fn whiten(&self, v: &[f64], out: &mut [f64]) {
        let d = self.d;
        if self.diagonal {
            for p in 0..d {
                out[p] = v[p] * self.inv_sqrt[p * d + p];
            }
        } else {
            for p in 0..d {
                out[p] = (0..d).map(|q| self.inv_sqrt[p * d + q] * v[q]).sum();
            }
        }
    }

    /// `|H|^{-1/2}`.
    pub fn inv_sqrt_det(&self) -> f64 {
        self.inv_sqrt_det
    }

    /// Largest absolute row sum of `H^{-1/2}`, bounds how much whitening can stretch L-inf lengths.
    fn whitening_linf_gain(&self) -> f64 {
        (0..self.d)
            .map(|p| (0..self.d).map(|q| self.inv_sqrt[p * self.d + q].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

const STACK_D: usize = 32;

/// Evaluates `K_H(X_a - X_b)` and finds candidate partners for compact kernels.
pub(crate) struct KernelEvaluator<'a> {
    ds: &'a Dataset,
    h: &'a BandwidthMatrix,
    kernel: KernelFamily,
    whitened: Option<[KdTree; 2]>,
}

impl<'a> KernelEvaluator<'a> {
    pub fn new(ds: &'a Dataset, h: &'a BandwidthMatrix, kernel: KernelFamily, search: NeighborSearch) -> Result<Self> {
        if h.d() != ds.d() {
            return Err(Error::InvalidParameter(format!(
                "bandwidth is {}-dimensional, data is {}-dimensional",
                h.d(),
                ds.d()
            )));
        }
        let whitened = match (search, kernel.support_linf()) {
            (NeighborSearch::KdTree, Some(_)) => {
                let build = |arm: Arm| {
                    let mut ps = PointSet::new(ds.d());
                    let mut u = vec![0.0; ds.d()];
                    for &j in ds.units(arm) {
                        h.whiten(ds.x(j), &mut u);
                        ps.push(j, &u);
                    }
                    KdTree::build(ps)
                };
                Some([build(Arm::Control), build(Arm::Treated)])
            }
            _ => None,
        };
        Ok(KernelEvaluator {
            ds,
            h,
            kernel,
            whitened,
        })
    }

    pub fn value_at(&self, x: &[f64], j: usize) -> f64 {
        let d = self.ds.d();
        let xj = self.ds.x(j);
        if d <= STACK_D {
            let mut diff = [0.0; STACK_D];
            let mut z = [0.0; STACK_D];
            for p in 0..d {
                diff[p] = x[p] - xj[p];
            }
            self.h.whiten(&diff[..d], &mut z[..d]);
            self.h.inv_sqrt_det() * self.kernel.eval(&z[..d])
        } else {
            let diff: Vec<f64> = (0..d).map(|p| x[p] - xj[p]).collect();
            let mut z = vec![0.0; d];
            self.h.whiten(&diff, &mut z);
            self.h.inv_sqrt_det() * self.kernel.eval(&z)
        }
    }

    /// Units of `arm` with a nonzero kernel value at `x`, ascending, with values.
    pub fn support(&self, x: &[f64], arm: Arm) -> Vec<(usize, f64)> {
        let candidates: Vec<usize> = match (&self.whitened, self.kernel.support_linf()) {
            (Some(trees), Some(r)) => {
                let mut u = vec![0.0; self.ds.d()];
                self.h.whiten(x, &mut u);
                let scale = u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let slack = 1e-9 * scale * self.h.whitening_linf_gain().max(1.0);
                trees[arm.flag() as usize].range_linf(&u, r + slack)
            }
            _ => self.ds.units(arm).to_vec(),
        };
        candidates
            .into_iter()
            .filter_map(|j| {
                let k = self.value_at(x, j);
                (k > 0.0).then_some((j, k))
            })
            .collect()
    }
}

/// Nadaraya-Watson (kernel matching) weights:
/// `w(i <- j) = K_H(X_i - X_j) / sum_k K_H(X_i - X_k)` over the opposite arm.
pub fn kernel_weights(
    ds: &Dataset,
    h: &BandwidthMatrix,
    kernel: KernelFamily,
    search: NeighborSearch,
) -> Result<SmoothingMatrix> {
    let eval = KernelEvaluator::new(ds, h, kernel, search)?;
    let rows = per_unit(ds.n(), |i| {
        let support = eval.support(ds.x(i), ds.arm(i).opposite());
        let mut terms: Vec<f64> = support.iter().map(|&(_, k)| k).collect();
        let denom = ordered_sum(&mut terms);
        if denom <= 0.0 || !denom.is_finite() {
            return Err(Error::StarvedUnit { unit: i + 1 });
        }
        Ok((support.into_iter().map(|(j, k)| (j, k / denom)).collect(), false))
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
    fn single_opposite_point_gets_full_weight() {
        let ds = load_dataset(vec![(vec![0.2], 1, 3.0), (vec![0.7], 0, 1.0)]).unwrap();
        for fam in [KernelFamily::Gaussian, KernelFamily::EpanechnikovProduct] {
            let sm = kernel_weights(&ds, &BandwidthMatrix::isotropic(1, 1.0).unwrap(), fam, NeighborSearch::BruteForce)
                .unwrap();
            assert_eq!(sm.get(0, 1), 1.0);
            assert_eq!(sm.get(1, 0), 1.0);
        }
    }

    #[test]
    fn equidistant_controls_split_evenly() {
        let ds = load_dataset(vec![(vec![0.5], 1, 0.0), (vec![0.4], 0, 0.0), (vec![0.6], 0, 0.0)]).unwrap();
        let h = BandwidthMatrix::isotropic(1, 0.3).unwrap();
        let sm = kernel_weights(&ds, &h, KernelFamily::Gaussian, NeighborSearch::BruteForce).unwrap();
        // 0.5 - 0.4 and 0.6 - 0.5 differ in the last bit, so allow rounding.
        assert!((sm.get(0, 1) - 0.5).abs() < 1e-12);
        assert!((sm.get(0, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_ratio_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let rows: Vec<_> = (0..8)
            .map(|i| (vec![rng.random::<f64>(), rng.random::<f64>()], (i % 2) as u8, 0.0))
            .collect();
        let ds = load_dataset(rows).unwrap();
        let h = BandwidthMatrix::isotropic(2, 0.2).unwrap();
        let sm = kernel_weights(&ds, &h, KernelFamily::Gaussian, NeighborSearch::BruteForce).unwrap();
        // Oracle: K_H(u) = (2 pi)^{-1} |H|^{-1/2} exp(-|u|^2 / (2 h^2)) evaluated by hand.
        let kh = |a: &[f64], b: &[f64]| {
            let r2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            (1.0 / (2.0 * std::f64::consts::PI)) / 0.04 * (-r2 / (2.0 * 0.04)).exp()
        };
        for i in 0..8 {
            let opp: Vec<usize> = (0..8).filter(|&j| j % 2 != i % 2).collect();
            let denom: f64 = opp.iter().map(|&k| kh(ds.x(i), ds.x(k))).sum();
            for &j in &opp {
                let expect = kh(ds.x(i), ds.x(j)) / denom;
                assert!((sm.get(i, j) - expect).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn compact_kernel_starves_isolated_unit() {
        let ds = load_dataset(vec![(vec![0.0], 1, 0.0), (vec![5.0], 0, 0.0), (vec![5.1], 1, 0.0)]).unwrap();
        let h = BandwidthMatrix::isotropic(1, 0.5).unwrap();
        let err = kernel_weights(&ds, &h, KernelFamily::EpanechnikovProduct, NeighborSearch::BruteForce).unwrap_err();
        assert!(matches!(err, Error::StarvedUnit { unit: 1 }), "{err}");
        assert!(err.to_string().contains("larger bandwidth"));
    }

    #[test]
    fn kd_tree_path_is_bitwise_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<_> = (0..400)
            .map(|_| {
                let x = vec![rng.random::<f64>(), rng.random::<f64>()];
                (x, rng.random_bool(0.5) as u8, 0.0)
            })
            .collect();
        let ds = load_dataset(rows).unwrap();
        let hs = [
            BandwidthMatrix::isotropic(2, 0.15).unwrap(),
            BandwidthMatrix::new(2, vec![0.04, 0.01, 0.01, 0.02]).unwrap(),
        ];
        for h in &hs {
            for fam in [KernelFamily::EpanechnikovProduct, KernelFamily::UniformBox] {
                let a = kernel_weights(&ds, h, fam, NeighborSearch::BruteForce).unwrap();
                let b = kernel_weights(&ds, h, fam, NeighborSearch::KdTree).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn bandwidth_validation() {
        assert!(BandwidthMatrix::new(2, vec![1.0, 0.5, 0.4, 1.0]).is_err());
        assert!(BandwidthMatrix::new(2, vec![1.0, 2.0, 2.0, 1.0]).is_err());
        assert!(BandwidthMatrix::isotropic(1, 0.0).is_err());
        let h = BandwidthMatrix::new(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        assert!((h.inv_sqrt_det() - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        // |H^{-1/2} v|^2 = v^T H^{-1} v; H^{-1} = [[2, -1], [-1, 2]] / 3.
        let mut z = [0.0; 2];
        h.whiten(&[1.0, 1.0], &mut z);
        assert!((z[0] * z[0] + z[1] * z[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kernels_integrate_to_one_and_have_stated_mu2() {
        // Midpoint rule on [-6, 6].
        for fam in [KernelFamily::Gaussian, KernelFamily::EpanechnikovProduct, KernelFamily::UniformBox] {
            let m = 120_000;
            let step = 12.0 / m as f64;
            let (mut mass, mut second) = (0.0, 0.0);
            for k in 0..m {
                let z = -6.0 + (k as f64 + 0.5) * step;
                let v = fam.eval(&[z]);
                mass += v * step;
                second += z * z * v * step;
            }
            assert!((mass - 1.0).abs() < 1e-6, "{fam:?} mass {mass}");
            assert!((second - fam.mu2()).abs() < 1e-6, "{fam:?} mu2 {second}");
            assert_eq!(fam.eval(&[0.3, -0.2]), fam.eval(&[-0.3, 0.2]));
        }
    }
}
