//! Cross-arm smoothing matrices `w(i <- j)` and the smoothers that build them.
//!
//! Every smoother here is a linear smoother in the outcomes: the weights are
//! computed from covariates and treatment labels only. Entries exist only for
//! pairs in opposite arms.

mod kernel;
mod local_linear;
mod spec;
mod wnn;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::numeric::ordered_sum;

pub use kernel::{kernel_weights, BandwidthMatrix, KernelFamily};
pub use local_linear::local_linear_weights;
pub use spec::{BandwidthSpec, ForestSpec, SmootherParams, SmootherSpec, WnnSpec};
pub use wnn::{wnn_weights, WnnGamma};

pub(crate) use kernel::KernelEvaluator;
pub(crate) use local_linear::LocalFit;
pub(crate) use wnn::ArmNeighbors;

/// Sparse cross-arm weight matrix with cached row and column sums.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingMatrix {
    arms: Vec<Arm>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    row_sum: Vec<f64>,
    col_sum: Vec<f64>,
    fallback: Vec<bool>,
}

/// Summary statistics of a smoothing matrix, as dumped by the `weights` command.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct WeightSummary {
    pub n: usize,
    pub nonzero_entries: usize,
    pub row_sum_min: f64,
    pub row_sum_max: f64,
    pub row_sum_max_abs_deviation: f64,
    pub col_sum_min: f64,
    pub col_sum_max: f64,
    pub col_sum_mean_treated: f64,
    pub col_sum_mean_control: f64,
    pub max_abs_row_sum: f64,
    pub negative_entries: usize,
    pub fallback_count: usize,
}

impl SmoothingMatrix {
    /// Assembles a matrix from per-row `(j, w)` lists.
    ///
    /// Rejects same-arm entries and duplicate columns. Exact zeros are dropped.
    pub fn from_rows(ds: &Dataset, rows: Vec<Vec<(usize, f64)>>, fallback: Vec<bool>) -> Result<Self> {
        let n = ds.n();
        if rows.len() != n || fallback.len() != n {
            return Err(Error::InvalidParameter(format!(
                "smoothing matrix needs {n} rows, got {}",
                rows.len()
            )));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.retain(|&(_, w)| w != 0.0);
            row.sort_unstable_by_key(|&(j, _)| j);
            for k in 0..row.len() {
                let (j, w) = row[k];
                if j >= n {
                    return Err(Error::InvalidParameter(format!("column {} out of range", j + 1)));
                }
                if ds.arm(j) == ds.arm(i) {
                    return Err(Error::InvalidParameter(format!(
                        "entry ({}, {}) joins two {} units",
                        i + 1,
                        j + 1,
                        ds.arm(i)
                    )));
                }
                if k > 0 && row[k - 1].0 == j {
                    return Err(Error::InvalidParameter(format!("duplicate entry ({}, {})", i + 1, j + 1)));
                }
                if !w.is_finite() {
                    return Err(Error::InvalidParameter(format!("non-finite weight at ({}, {})", i + 1, j + 1)));
                }
                cols.push(j);
                vals.push(w);
            }
            row_ptr.push(cols.len());
        }
        let mut sm = SmoothingMatrix {
            arms: ds.arms().to_vec(),
            row_ptr,
            cols,
            vals,
            row_sum: Vec::new(),
            col_sum: Vec::new(),
            fallback,
        };
        sm.row_sum = (0..n)
            .map(|i| ordered_sum(&mut sm.vals[sm.row_ptr[i]..sm.row_ptr[i + 1]].to_vec()))
            .collect();
        let mut by_col: Vec<Vec<f64>> = vec![Vec::new(); n];
        for i in 0..n {
            for (j, w) in sm.row(i) {
                by_col[j].push(w);
            }
        }
        sm.col_sum = by_col.into_iter().map(|mut c| ordered_sum(&mut c)).collect();
        Ok(sm)
    }

    pub(crate) fn from_row_results(ds: &Dataset, rows: Vec<(Vec<(usize, f64)>, bool)>) -> Result<Self> {
        let (rows, fallback): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        Self::from_rows(ds, rows, fallback)
    }

    pub fn n(&self) -> usize {
        self.arms.len()
    }

    /// `(j, w(i <- j))` for every stored entry of row `i`, ascending in `j`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// `w(i <- j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self) -> &[f64] {
        &self.row_sum
    }

    /// Per-unit `sum_j w(j <- i)`, the implicit density-ratio estimate.
    pub fn col_sum(&self) -> &[f64] {
        &self.col_sum
    }

    pub fn fallback_flags(&self) -> &[bool] {
        &self.fallback
    }

    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|&&f| f).count()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn abs_row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, w)| w.abs()).sum()
    }

    /// `(i, j, w)` triplets in row-major order, 0-based.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n()).flat_map(move |i| self.row(i).map(move |(j, w)| (i, j, w)))
    }

    pub fn summary(&self) -> WeightSummary {
        let fold = |v: &[f64], f: fn(f64, f64) -> f64, init: f64| v.iter().copied().fold(init, f);
        let arm_mean = |arm: Arm| {
            let vals: Vec<f64> = (0..self.n())
                .filter(|&i| self.arms[i] == arm)
                .map(|i| self.col_sum[i])
                .collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        };
        WeightSummary {
            n: self.n(),
            nonzero_entries: self.nnz(),
            row_sum_min: fold(&self.row_sum, f64::min, f64::INFINITY),
            row_sum_max: fold(&self.row_sum, f64::max, f64::NEG_INFINITY),
            row_sum_max_abs_deviation: self.row_sum.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max),
            col_sum_min: fold(&self.col_sum, f64::min, f64::INFINITY),
            col_sum_max: fold(&self.col_sum, f64::max, f64::NEG_INFINITY),
            col_sum_mean_treated: arm_mean(Arm::Treated),
            col_sum_mean_control: arm_mean(Arm::Control),
            max_abs_row_sum: (0..self.n()).map(|i| self.abs_row_sum(i)).fold(0.0, f64::max),
            negative_entries: self.vals.iter().filter(|&&w| w < 0.0).count(),
            fallback_count: self.fallback_count(),
        }
    }
}

/// Column sums of `sm`: the implicit estimate of `(1 - e(x))/e(x)` at treated
/// units and `e(x)/(1 - e(x))` at control units.
pub fn density_ratio(sm: &SmoothingMatrix, ds: &Dataset) -> Vec<f64> {
    debug_assert_eq!(sm.n(), ds.n());
    sm.col_sum().to_vec()
}

/// The population quantity column sums estimate, given the propensity.
pub fn density_ratio_target(arm: Arm, propensity: f64) -> f64 {
    match arm {
        Arm::Treated => (1.0 - propensity) / propensity,
        Arm::Control => propensity / (1.0 - propensity),
    }
}

/// Runs `f` for every unit in parallel, preserving unit order.
pub(crate) fn per_unit<F>(n: usize, f: F) -> Result<Vec<(Vec<(usize, f64)>, bool)>>
where
    F: Fn(usize) -> Result<(Vec<(usize, f64)>, bool)> + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}
