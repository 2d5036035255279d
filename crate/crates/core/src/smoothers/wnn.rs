use super::{per_unit, SmoothingMatrix};
use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::neighbors::{brute_knn, KdTree, Neighbor, NeighborSearch, PointSet};

/// Preassigned rank weights `gamma_1..gamma_M`: nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WnnGamma {
    gamma: Vec<f64>,
}

impl WnnGamma {
    pub fn new(gamma: Vec<f64>) -> Result<Self> {
        if gamma.is_empty() {
            return Err(Error::InvalidParameter("gamma must be nonempty".into()));
        }
        if gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::InvalidParameter("gamma entries must be nonnegative".into()));
        }
        let total: f64 = gamma.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("gamma must sum to 1 (sums to {total})")));
        }
        Ok(WnnGamma { gamma })
    }

    /// Plain M-NN matching: `gamma_m = 1/M`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("M must be at least 1".into()));
        }
        Ok(WnnGamma {
            gamma: vec![1.0 / m as f64; m],
        })
    }

    pub fn m(&self) -> usize {
        self.gamma.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.gamma
    }
}

pub(crate) struct ArmNeighbors {
    points: [PointSet; 2],
    trees: Option<[KdTree; 2]>,
}

impl ArmNeighbors {
    pub fn new(ds: &Dataset, search: NeighborSearch) -> Self {
        let build = |arm: Arm| {
            let mut ps = PointSet::new(ds.d());
            for &j in ds.units(arm) {
                ps.push(j, ds.x(j));
            }
            ps
        };
        let points = [build(Arm::Control), build(Arm::Treated)];
        let trees = match search {
            NeighborSearch::KdTree => Some([KdTree::build(points[0].clone()), KdTree::build(points[1].clone())]),
            NeighborSearch::BruteForce => None,
        };
        ArmNeighbors { points, trees }
    }

    pub fn knn(&self, x: &[f64], arm: Arm, k: usize) -> Vec<Neighbor> {
        let a = arm.flag() as usize;
        match &self.trees {
            Some(t) => t[a].knn(x, k),
            None => brute_knn(&self.points[a], x, k),
        }
    }
}

/// Weighted nearest-neighbor matching: `w(i <- j) = gamma_m` when `j` is the
/// m-th nearest opposite-arm unit of `X_i` (Euclidean; ties to the lower index).
pub fn wnn_weights(ds: &Dataset, gamma: &WnnGamma, search: NeighborSearch) -> Result<SmoothingMatrix> {
    let m = gamma.m();
    for arm in [Arm::Control, Arm::Treated] {
        if ds.n_arm(arm) < m {
            return Err(Error::TooFewNeighbors {
                unit: ds.units(arm.opposite())[0] + 1,
                needed: m,
                available: ds.n_arm(arm),
            });
        }
    }
    let nn = ArmNeighbors::new(ds, search);
    let rows = per_unit(ds.n(), |i| {
        let found = nn.knn(ds.x(i), ds.arm(i).opposite(), m);
        Ok((found.iter().zip(gamma.weights()).map(|(nb, &g)| (nb.id, g)).collect(), false))
    })?;
    SmoothingMatrix::from_row_results(ds, rows)
}
