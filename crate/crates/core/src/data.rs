//! Observational data model: covariates, binary treatment, outcome.
//!
//! Unit indices are 0-based everywhere in the library. Anything that reaches
//! a user (error messages, CSV dumps, reports) is shifted to 1-based.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn from_flag(flag: u8) -> Option<Arm> {
        match flag {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }

    pub fn flag(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn opposite(self) -> Arm {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }

    /// `2D - 1`: +1 for treated, -1 for control.
    pub fn sign(self) -> f64 {
        match self {
            Arm::Control => -1.0,
            Arm::Treated => 1.0,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arm::Control => f.write_str("control"),
            Arm::Treated => f.write_str("treated"),
        }
    }
}

/// Validated sample of `n` units with `d` covariates each.
///
/// Immutable once built; covariates are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    covariates: Vec<f64>,
    arms: Vec<Arm>,
    outcome: Vec<f64>,
    index: ArmIndex,
}

/// Sorted unit indices of each arm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmIndex {
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
}

impl ArmIndex {
    pub fn of(&self, arm: Arm) -> &[usize] {
        match arm {
            Arm::Control => &self.control,
            Arm::Treated => &self.treated,
        }
    }
}

/// Builds a [`Dataset`] from `(covariates, treatment flag, outcome)` rows.
///
/// Rows are validated in order; the first problem found is reported with
/// its 1-based row number.
pub fn load_dataset<I>(rows: I) -> Result<Dataset>
where
    I: IntoIterator<Item = (Vec<f64>, u8, f64)>,
{
    let mut d = None;
    let mut covariates = Vec::new();
    let mut arms = Vec::new();
    let mut outcome = Vec::new();
    for (k, (x, flag, y)) in rows.into_iter().enumerate() {
        let row = k + 1;
        let expected = *d.get_or_insert(x.len());
        if expected == 0 {
            return Err(Error::ZeroDimension);
        }
        if x.len() != expected {
            return Err(Error::DimensionMismatch {
                row,
                expected,
                found: x.len(),
            });
        }
        if let Some(p) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row,
                field: format!("covariate x{}", p + 1),
            });
        }
        if !y.is_finite() {
            return Err(Error::NonFinite {
                row,
                field: "outcome".into(),
            });
        }
        let arm = Arm::from_flag(flag).ok_or(Error::InvalidTreatment { row })?;
        covariates.extend_from_slice(&x);
        arms.push(arm);
        outcome.push(y);
    }
    Dataset::from_parts(d.unwrap_or(0), covariates, arms, outcome)
}

impl Dataset {
    /// Assembles a dataset from flat row-major covariates.
    pub fn from_parts(d: usize, covariates: Vec<f64>, arms: Vec<Arm>, outcome: Vec<f64>) -> Result<Self> {
        let n = arms.len();
        if n < 2 {
            return Err(Error::TooFewUnits(n));
        }
        if d == 0 {
            return Err(Error::ZeroDimension);
        }
        if outcome.len() != n || covariates.len() != n * d {
            return Err(Error::InvalidParameter(format!(
                "inconsistent lengths: {} arms, {} outcomes, {} covariate values for d = {d}",
                n,
                outcome.len(),
                covariates.len()
            )));
        }
        for i in 0..n {
            if let Some(p) = covariates[i * d..(i + 1) * d].iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row: i + 1,
                    field: format!("covariate x{}", p + 1),
                });
            }
            if !outcome[i].is_finite() {
                return Err(Error::NonFinite {
                    row: i + 1,
                    field: "outcome".into(),
                });
            }
        }
        let mut index = ArmIndex {
            treated: Vec::new(),
            control: Vec::new(),
        };
        for (i, arm) in arms.iter().enumerate() {
            match arm {
                Arm::Treated => index.treated.push(i),
                Arm::Control => index.control.push(i),
            }
        }
        if index.control.is_empty() {
            return Err(Error::EmptyArm(Arm::Control));
        }
        if index.treated.is_empty() {
            return Err(Error::EmptyArm(Arm::Treated));
        }
        Ok(Dataset {
            n,
            d,
            covariates,
            arms,
            outcome,
            index,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_arm(&self, arm: Arm) -> usize {
        self.index.of(arm).len()
    }

    pub fn n0(&self) -> usize {
        self.index.control.len()
    }

    pub fn n1(&self) -> usize {
        self.index.treated.len()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.d..(i + 1) * self.d]
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn arm(&self, i: usize) -> Arm {
        self.arms[i]
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn y(&self, i: usize) -> f64 {
        self.outcome[i]
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn arm_index(&self) -> &ArmIndex {
        &self.index
    }

    pub fn units(&self, arm: Arm) -> &[usize] {
        self.index.of(arm)
    }

    /// Same covariates and treatment, new outcomes.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        Dataset::from_parts(self.d, self.covariates.clone(), self.arms.clone(), outcome)
    }

    /// Rows as `(covariates, flag, outcome)` triples, the inverse of [`load_dataset`].
    pub fn rows(&self) -> impl Iterator<Item = (Vec<f64>, u8, f64)> + '_ {
        (0..self.n).map(move |i| (self.x(i).to_vec(), self.arms[i].flag(), self.outcome[i]))
    }

    /// SHA-256 over the exact bit patterns of every stored value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update((self.d as u64).to_le_bytes());
        for i in 0..self.n {
            for v in self.x(i) {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update([self.arms[i].flag()]);
            h.update(self.outcome[i].to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A bijection on `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &p in &mapping {
            if p >= n {
                return Err(Error::NotBijective {
                    n,
                    reason: format!("image {} out of range", p + 1),
                });
            }
            if seen[p] {
                return Err(Error::NotBijective {
                    n,
                    reason: format!("image {} repeated", p + 1),
                });
            }
            seen[p] = true;
        }
        Ok(Permutation { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            mapping: (0..n).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        Permutation { mapping }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &p) in self.mapping.iter().enumerate() {
            inv[p] = i;
        }
        Permutation { mapping: inv }
    }
}

/// Reindexes `ds` so that output row `i` is input row `p(i)`.
pub fn permute(ds: &Dataset, p: &Permutation) -> Result<Dataset> {
    if p.len() != ds.n() {
        return Err(Error::NotBijective {
            n: ds.n(),
            reason: format!("permutation has length {}", p.len()),
        });
    }
    let d = ds.d();
    let mut covariates = Vec::with_capacity(ds.n() * d);
    let mut arms = Vec::with_capacity(ds.n());
    let mut outcome = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let src = p.apply(i);
        covariates.extend_from_slice(ds.x(src));
        arms.push(ds.arm(src));
        outcome.push(ds.y(src));
    }
    Dataset::from_parts(d, covariates, arms, outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn minimal() -> Dataset {
        load_dataset(vec![(vec![0.2], 1, 3.0), (vec![0.7], 0, 1.0)]).unwrap()
    }

    #[test]
    fn minimal_input() {
        let ds = minimal();
        assert_eq!((ds.n(), ds.d(), ds.n1(), ds.n0()), (2, 1, 1, 1));
        assert_eq!(ds.arm_index().treated, vec![0]);
        assert_eq!(ds.arm_index().control, vec![1]);
    }

    #[test]
    fn empty_control_arm() {
        let err = load_dataset(vec![(vec![0.2], 1, 3.0), (vec![0.3], 1, 2.0)]).unwrap_err();
        assert_eq!(err.to_string(), "empty control arm");
        let err = load_dataset(vec![(vec![0.2], 1, 3.0)]).unwrap_err();
        assert!(matches!(err, Error::TooFewUnits(1)));
    }

    #[test]
    fn dimension_mismatch_names_row() {
        let err = load_dataset(vec![(vec![0.2, 0.1], 1, 3.0), (vec![0.7], 0, 1.0)]).unwrap_err();
        assert!(err.to_string().starts_with("dimension mismatch at row 2"), "{err}");
    }

    #[test]
    fn rejects_non_finite_and_bad_flags() {
        let err = load_dataset(vec![(vec![0.2], 1, f64::NAN), (vec![0.7], 0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, .. }));
        let err = load_dataset(vec![(vec![0.2], 1, 1.0), (vec![f64::INFINITY], 0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 2, .. }));
        let err = load_dataset(vec![(vec![0.2], 2, 1.0), (vec![0.1], 0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::InvalidTreatment { row: 1 }));
    }

    #[test]
    fn identity_and_swap() {
        let ds = minimal();
        assert_eq!(permute(&ds, &Permutation::identity(2)).unwrap(), ds);
        let swapped = permute(&ds, &Permutation::new(vec![1, 0]).unwrap()).unwrap();
        assert_eq!(swapped.x(0), &[0.7]);
        assert_eq!(swapped.arm(0), Arm::Control);
        assert_eq!(swapped.y(1), 3.0);
    }

    #[test]
    fn rejects_non_bijection() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        let ds = minimal();
        assert!(permute(&ds, &Permutation::identity(3)).is_err());
    }

    #[test]
    fn permute_then_inverse_restores() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<_> = (0..10)
            .map(|i| (vec![rng.random::<f64>(), rng.random::<f64>()], (i % 2) as u8, rng.random::<f64>()))
            .collect();
        let ds = load_dataset(rows).unwrap();
        let p = Permutation::random(10, &mut rng);
        let back = permute(&permute(&ds, &p).unwrap(), &p.inverse()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.fingerprint(), ds.fingerprint());
    }

    #[test]
    fn permute_preserves_counts_and_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<_> = (0..9)
            .map(|i| (vec![rng.random::<f64>()], (i % 3 == 0) as u8, rng.random::<f64>()))
            .collect();
        let ds = load_dataset(rows).unwrap();
        let p = Permutation::random(9, &mut rng);
        let q = permute(&ds, &p).unwrap();
        assert_eq!((q.n(), q.d(), q.n0(), q.n1()), (ds.n(), ds.d(), ds.n0(), ds.n1()));
        let key = |ds: &Dataset| {
            let mut v: Vec<_> = ds.rows().map(|(x, f, y)| (x[0].to_bits(), f, y.to_bits())).collect();
            v.sort();
            v
        };
        assert_eq!(key(&q), key(&ds));
    }
}
