//! Per-arm outcome regressions used for bias correction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};

/// Ridge added to the standardized gram matrix.
const RIDGE: f64 = 1e-10;

/// How the adjuster is chosen in a run config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AdjusterSpec {
    Polynomial {
        #[serde(default = "default_degree")]
        degree: usize,
    },
    Zero,
}

fn default_degree() -> usize {
    2
}

impl Default for AdjusterSpec {
    fn default() -> Self {
        AdjusterSpec::Polynomial { degree: 2 }
    }
}

impl AdjusterSpec {
    /// Fits on all units, or on units with `exclude[i] == false`.
    pub fn fit(&self, ds: &Dataset, exclude: Option<&[bool]>) -> Result<OutcomeModel> {
        match self {
            AdjusterSpec::Zero => Ok(zero_adjuster()),
            AdjusterSpec::Polynomial { degree } => OutcomeModel::polynomial(ds, *degree, exclude),
        }
    }

    pub fn name(&self) -> String {
        match self {
            AdjusterSpec::Zero => "zero".into(),
            AdjusterSpec::Polynomial { degree } => format!("polynomial-{degree}"),
        }
    }
}

/// Polynomial of bounded total degree in standardized covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialFit {
    degree: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
    exponents: Vec<Vec<u32>>,
    coef: Vec<f64>,
}

impl PolynomialFit {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn basis_size(&self) -> usize {
        self.exponents.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = x
            .iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((v, c), s)| (v - c) / s)
            .collect();
        self.exponents
            .iter()
            .zip(&self.coef)
            .map(|(e, c)| c * monomial(&z, e))
            .sum()
    }
}

fn monomial(z: &[f64], e: &[u32]) -> f64 {
    z.iter().zip(e).map(|(v, &k)| v.powi(k as i32)).product()
}

/// Exponent vectors of all monomials in `d` variables with total degree at
/// most `p`, graded by degree.
pub fn monomial_exponents(d: usize, p: usize) -> Vec<Vec<u32>> {
    fn rec(d: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == d - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in (0..=left).rev() {
            cur.push(k);
            rec(d, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=p as u32 {
        rec(d, total, &mut Vec::with_capacity(d), &mut out);
    }
    out
}

/// One arm's regression function `x -> mu_hat(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ArmModel {
    Constant(f64),
    Polynomial(PolynomialFit),
    /// Another model plus a constant.
    Shifted(Box<ArmModel>, f64),
}

impl ArmModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            ArmModel::Constant(c) => *c,
            ArmModel::Polynomial(p) => p.predict(x),
            ArmModel::Shifted(m, c) => m.predict(x) + c,
        }
    }
}

/// Provenance of a fitted outcome model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub family: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    /// Units used per arm, `[control, treated]`.
    pub fit_units: [usize; 2],
    pub fit_sample: String,
}

/// Fitted `mu_hat_0` and `mu_hat_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    arms: [ArmModel; 2],
    descriptor: ModelDescriptor,
}

impl OutcomeModel {
    pub fn new(control: ArmModel, treated: ArmModel, descriptor: ModelDescriptor) -> Self {
        OutcomeModel {
            arms: [control, treated],
            descriptor,
        }
    }

    /// Degree-`degree` polynomial fit on each arm, skipping excluded units.
    pub fn polynomial(ds: &Dataset, degree: usize, exclude: Option<&[bool]>) -> Result<Self> {
        let c = fit_polynomial(ds, Arm::Control, degree, exclude)?;
        let t = fit_polynomial(ds, Arm::Treated, degree, exclude)?;
        let count = |arm| {
            ds.units(arm)
                .iter()
                .filter(|&&i| !exclude.is_some_and(|m| m[i]))
                .count()
        };
        Ok(OutcomeModel {
            arms: [ArmModel::Polynomial(c), ArmModel::Polynomial(t)],
            descriptor: ModelDescriptor {
                family: "polynomial".into(),
                degree: Some(degree),
                fit_units: [count(Arm::Control), count(Arm::Treated)],
                fit_sample: if exclude.is_some() { "out-of-fold" } else { "full" }.into(),
            },
        })
    }

    pub fn arm(&self, arm: Arm) -> &ArmModel {
        &self.arms[arm.flag() as usize]
    }

    pub fn predict(&self, arm: Arm, x: &[f64]) -> f64 {
        self.arm(arm).predict(x)
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    pub fn with_fit_sample(mut self, label: impl Into<String>) -> Self {
        self.descriptor.fit_sample = label.into();
        self
    }

    /// `mu_hat_0 + c0`, `mu_hat_1 + c1`.
    pub fn shifted(&self, c0: f64, c1: f64) -> Self {
        let mut descriptor = self.descriptor.clone();
        descriptor.family = format!("{}+shift", descriptor.family);
        OutcomeModel {
            arms: [
                ArmModel::Shifted(Box::new(self.arms[0].clone()), c0),
                ArmModel::Shifted(Box::new(self.arms[1].clone()), c1),
            ],
            descriptor,
        }
    }
}

/// `mu_hat_0 = mu_hat_1 = 0`: no regression adjustment.
pub fn zero_adjuster() -> OutcomeModel {
    OutcomeModel {
        arms: [ArmModel::Constant(0.0), ArmModel::Constant(0.0)],
        descriptor: ModelDescriptor {
            family: "zero".into(),
            degree: None,
            fit_units: [0, 0],
            fit_sample: "none".into(),
        },
    }
}

/// Least squares on the full monomial basis of total degree at most `degree`
/// over units of `arm` not flagged in `exclude`.
pub fn fit_polynomial(ds: &Dataset, arm: Arm, degree: usize, exclude: Option<&[bool]>) -> Result<PolynomialFit> {
    let d = ds.d();
    let units: Vec<usize> = ds
        .units(arm)
        .iter()
        .copied()
        .filter(|&i| !exclude.is_some_and(|m| m[i]))
        .collect();
    let exponents = monomial_exponents(d, degree);
    let k = exponents.len();
    if units.len() < k {
        return Err(Error::UnderIdentified {
            arm,
            units: units.len(),
            basis: k,
        });
    }
    let m = units.len() as f64;
    let mut center = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for &i in &units {
        for p in 0..d {
            center[p] += ds.x(i)[p] / m;
        }
    }
    for &i in &units {
        for p in 0..d {
            scale[p] += (ds.x(i)[p] - center[p]).powi(2) / m;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let phi = DMatrix::from_fn(units.len(), k, |r, c| {
        let z: Vec<f64> = (0..d).map(|p| (ds.x(units[r])[p] - center[p]) / scale[p]).collect();
        monomial(&z, &exponents[c])
    });
    let y = DVector::from_iterator(units.len(), units.iter().map(|&i| ds.y(i)));
    let gram = phi.transpose() * &phi + DMatrix::identity(k, k) * RIDGE;
    let rhs = phi.transpose() * y;
    let coef = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or(Error::UnderIdentified {
                arm,
                units: units.len(),
                basis: k,
            })?,
    };
    Ok(PolynomialFit {
        degree,
        center,
        scale,
        exponents,
        coef: coef.iter().copied().collect(),
    })
}

/// `max_x |mu_hat(x) - truth(x)|` over `grid`.
pub fn sup_error<F: Fn(&[f64]) -> f64>(model: &ArmModel, truth: F, grid: &[Vec<f64>]) -> f64 {
    grid.iter()
        .map(|x| (model.predict(x) - truth(x)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_dataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_sizes() {
        assert_eq!(monomial_exponents(1, 3).len(), 4);
        assert_eq!(monomial_exponents(2, 2).len(), 6);
        assert_eq!(monomial_exponents(3, 2).len(), 10);
        assert_eq!(monomial_exponents(3, 0), vec![vec![0, 0, 0]]);
    }

    #[test]
    fn degree_zero_is_arm_mean() {
        let ds = load_dataset(vec![
            (vec![0.1], 1, 1.0),
            (vec![0.4], 1, 4.0),
            (vec![0.9], 0, -2.0),
            (vec![0.3], 1, 7.0),
        ])
        .unwrap();
        let m = OutcomeModel::polynomial(&ds, 0, None).unwrap();
        assert!((m.predict(Arm::Treated, &[0.77]) - 4.0).abs() < 1e-9);
        assert!((m.predict(Arm::Control, &[0.0]) + 2.0).abs() < 1e-9);
    }

    #[test]
    fn linear_truth_reproduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<_> = (0..40)
            .map(|i| {
                let x = rng.random::<f64>();
                (vec![x], (i % 2) as u8, 1.0 + 2.0 * x)
            })
            .collect();
        let ds = load_dataset(rows).unwrap();
        let m = OutcomeModel::polynomial(&ds, 1, None).unwrap();
        let grid: Vec<Vec<f64>> = (0..=20).map(|k| vec![k as f64 / 20.0]).collect();
        assert!(sup_error(m.arm(Arm::Treated), |x| 1.0 + 2.0 * x[0], &grid) < 1e-8);
    }

    #[test]
    fn matches_dense_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<_> = (0..50)
            .map(|_| {
                let (a, b) = (rng.random::<f64>() * 3.0, rng.random::<f64>() - 2.0);
                (vec![a, b], 1, (a * b).sin() + rng.random::<f64>())
            })
            .chain(std::iter::once((vec![0.0, 0.0], 0, 0.0)))
            .collect();
        let ds = load_dataset(rows).unwrap();
        let fit = fit_polynomial(&ds, Arm::Treated, 2, None).unwrap();
        // Raw basis 1, a, b, a^2, ab, b^2 solved through SVD.
        let raw = |x: &[f64]| [1.0, x[0], x[1], x[0] * x[0], x[0] * x[1], x[1] * x[1]];
        let t = ds.units(Arm::Treated);
        let a = DMatrix::from_fn(t.len(), 6, |r, c| raw(ds.x(t[r]))[c]);
        let y = DVector::from_iterator(t.len(), t.iter().map(|&i| ds.y(i)));
        let beta = a.svd(true, true).solve(&y, 1e-14).unwrap();
        for q in [[0.5, -1.5], [2.0, -1.1], [1.3, -1.9]] {
            let want: f64 = raw(&q).iter().zip(beta.iter()).map(|(u, v)| u * v).sum();
            assert!((fit.predict(&q) - want).abs() < 1e-8);
        }
    }

    #[test]
    fn under_identified() {
        let ds = load_dataset(vec![(vec![0.1, 0.2], 1, 1.0), (vec![0.3, 0.1], 0, 2.0)]).unwrap();
        assert!(matches!(
            OutcomeModel::polynomial(&ds, 1, None),
            Err(Error::UnderIdentified { basis: 3, .. })
        ));
    }

    #[test]
    fn exclusion_ignores_masked_outcomes() {
        let ds = load_dataset(vec![
            (vec![0.1], 1, 1.0),
            (vec![0.4], 1, 4.0),
            (vec![0.9], 1, 100.0),
            (vec![0.3], 0, 7.0),
        ])
        .unwrap();
        let mask = [false, false, true, false];
        let m = OutcomeModel::polynomial(&ds, 0, Some(&mask)).unwrap();
        assert!((m.predict(Arm::Treated, &[0.5]) - 2.5).abs() < 1e-9);
        assert_eq!(m.descriptor().fit_units, [1, 2]);
    }

    #[test]
    fn zero_adjuster_and_sup_error() {
        let z = zero_adjuster();
        assert_eq!(z.predict(Arm::Treated, &[3.0]), 0.0);
        let grid: Vec<Vec<f64>> = (0..=10).map(|k| vec![k as f64 / 10.0]).collect();
        assert_eq!(sup_error(z.arm(Arm::Treated), |x| x[0], &grid), 1.0);
        let s = z.shifted(1.0, -2.0);
        assert_eq!(s.predict(Arm::Treated, &[0.0]), -2.0);
    }

    #[test]
    fn adjuster_spec_parses() {
        let a: AdjusterSpec = serde_json::from_str(r#"{"type":"polynomial","degree":1}"#).unwrap();
        assert_eq!(a, AdjusterSpec::Polynomial { degree: 1 });
        let z: AdjusterSpec = serde_json::from_str(r#"{"type":"zero"}"#).unwrap();
        assert_eq!(z, AdjusterSpec::Zero);
    }
}
