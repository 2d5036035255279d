//! Honest subsampled regression trees and the forest smoothing matrix.
//!
//! Trees never look at outcomes. Each split is placed at the feasible
//! position nearest the node median, the split axis follows a randomized
//! schedule that keeps every axis's share of splits along a path at or above
//! `floor(phi * depth / d)`, and nodes stop splitting once they cannot give
//! both children at least `theta` points.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::numeric::derive_seed;
use crate::smoothers::SmoothingMatrix;

/// Tree-growing parameters shared by both arms' forests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    #[serde(rename = "B")]
    pub trees: usize,
    pub s: usize,
    pub theta: usize,
    pub alpha: f64,
    pub phi: f64,
    pub seed: u64,
}

impl ForestConfig {
    /// `B = n`, `s = ceil(2 sqrt(n))` capped at the smaller arm, `theta = 8`
    /// (or `s` if smaller), `alpha = 0.25`, `phi = 0.9`.
    pub fn defaults(n0: usize, n1: usize, seed: u64) -> Self {
        let n = n0 + n1;
        let s = ((2.0 * (n as f64).sqrt()).ceil() as usize).min(n0.min(n1)).max(1);
        ForestConfig {
            trees: n.max(1),
            s,
            theta: 8.min(s),
            alpha: 0.25,
            phi: 0.9,
            seed,
        }
    }

    /// Largest admissible leaf, `floor(theta / alpha)`.
    pub fn max_leaf(&self) -> usize {
        (self.theta as f64 / self.alpha).floor() as usize
    }

    /// Minimum points on each side when splitting a node of `m` points.
    pub fn min_child(&self, m: usize) -> usize {
        self.theta.max((self.alpha * m as f64).floor() as usize)
    }

    pub fn validate(&self, n0: usize, n1: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleForest(m));
        if self.trees == 0 {
            return bad("B must be at least 1".into());
        }
        if self.theta == 0 {
            return bad("theta must be at least 1".into());
        }
        if self.s < self.theta {
            return bad(format!("subsample size s = {} is below theta = {}", self.s, self.theta));
        }
        if self.s > n0.min(n1) {
            return bad(format!(
                "subsample size s = {} exceeds the smaller arm ({} units)",
                self.s,
                n0.min(n1)
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return bad(format!("alpha = {} outside (0, 0.5]", self.alpha));
        }
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return bad(format!("phi = {} outside (0, 1)", self.phi));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        axis: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Subsample points routed through this node.
        size: usize,
    },
    Leaf(usize),
}

/// A terminal cell: its subsample members and its axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub members: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Ancestor splits along each axis.
    pub axis_counts: Vec<usize>,
}

impl Leaf {
    pub fn depth(&self) -> usize {
        self.axis_counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HonestTree {
    subsample: Vec<usize>,
    nodes: Vec<TreeNode>,
    leaves: Vec<Leaf>,
}

impl HonestTree {
    /// Unit indices drawn for this tree, ascending.
    pub fn subsample(&self) -> &[usize] {
        &self.subsample
    }

    /// Nodes in construction order; node 0 is the root.
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    /// Index into [`leaves`](Self::leaves) of the cell containing `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                TreeNode::Leaf(l) => return l,
                TreeNode::Split {
                    axis,
                    threshold,
                    left,
                    right,
                    ..
                } => k = if x[axis] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaf_of(&self, x: &[f64]) -> &Leaf {
        &self.leaves[self.leaf_index(x)]
    }
}

/// `B` honest trees over one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    arm: Arm,
    config: ForestConfig,
    trees: Vec<HonestTree>,
}

impl Forest {
    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn trees(&self) -> &[HonestTree] {
        &self.trees
    }
}

struct Grower<'a> {
    ds: &'a Dataset,
    cfg: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
    leaves: Vec<Leaf>,
}

impl Grower<'_> {
    fn grow(&mut self, units: &mut [usize], lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf(usize::MAX));
        let m = units.len();
        let d = self.ds.d();
        let split = if m >= 2 * self.cfg.theta {
            self.choose_split(units, &counts)
        } else {
            None
        };
        let Some((axis, k, threshold)) = split else {
            let mut members = units.to_vec();
            members.sort_unstable();
            self.nodes[idx] = TreeNode::Leaf(self.leaves.len());
            self.leaves.push(Leaf {
                members,
                lo,
                hi,
                axis_counts: counts,
            });
            return idx;
        };
        debug_assert!(axis < d);
        let mut child_counts = counts;
        child_counts[axis] += 1;
        let (left_units, right_units) = units.split_at_mut(k);
        let mut left_hi = hi.clone();
        left_hi[axis] = threshold;
        let mut right_lo = lo.clone();
        right_lo[axis] = threshold;
        let left = self.grow(left_units, lo, left_hi, child_counts.clone());
        let right = self.grow(right_units, right_lo, hi, child_counts);
        self.nodes[idx] = TreeNode::Split {
            axis,
            threshold,
            left,
            right,
            size: m,
        };
        idx
    }

    /// Axes that keep `c_p >= floor(phi * T / d)` satisfiable for the next
    /// few depths after splitting on them.
    fn admissible_axes(&self, counts: &[usize]) -> Vec<usize> {
        let d = counts.len();
        let phi = self.cfg.phi;
        let t = counts.iter().sum::<usize>() + 1;
        let horizon = ((d as f64 + 1.0) / (1.0 - phi)).ceil() as usize + 1;
        let need = |depth: usize| (phi * depth as f64 / d as f64).floor() as usize;
        let feasible = |c: &[usize]| {
            (t..=t + horizon).all(|depth| {
                let deficit: usize = c.iter().map(|&cp| need(depth).saturating_sub(cp)).sum();
                deficit <= depth - t
            })
        };
        let ok: Vec<usize> = (0..d)
            .filter(|&a| {
                let mut c = counts.to_vec();
                c[a] += 1;
                feasible(&c)
            })
            .collect();
        if ok.is_empty() {
            let min = *counts.iter().min().unwrap();
            return (0..d).filter(|&a| counts[a] == min).collect();
        }
        ok
    }

    fn choose_split(&mut self, units: &mut [usize], counts: &[usize]) -> Option<(usize, usize, f64)> {
        let d = counts.len();
        let mut order = self.admissible_axes(counts);
        // Uniform pick among admissible axes; the rest are fallbacks in
        // ascending split-count order, tried only if no threshold exists.
        let pick = self.rng.random_range(0..order.len());
        order.swap(0, pick);
        let mut rest: Vec<usize> = (0..d).filter(|a| !order.contains(a)).collect();
        rest.sort_by_key(|&a| (counts[a], a));
        order.extend(rest);
        for axis in order {
            if let Some((k, thr)) = self.threshold(units, axis) {
                return Some((axis, k, thr));
            }
        }
        None
    }

    /// Sorts `units` along `axis` and returns the left size and threshold of
    /// the feasible cut nearest the median, if any.
    fn threshold(&self, units: &mut [usize], axis: usize) -> Option<(usize, f64)> {
        let ds = self.ds;
        units.sort_unstable_by(|&a, &b| ds.x(a)[axis].total_cmp(&ds.x(b)[axis]).then(a.cmp(&b)));
        let m = units.len();
        let lo = self.cfg.min_child(m);
        if 2 * lo > m {
            return None;
        }
        let v = |k: usize| ds.x(units[k])[axis];
        let mid = m / 2;
        let k = (lo..=m - lo)
            .filter(|&k| k > 0 && v(k - 1) < v(k))
            .min_by_key(|&k| (k.abs_diff(mid), k))?;
        let (a, b) = (v(k - 1), v(k));
        let mut thr = a + 0.5 * (b - a);
        if !(thr >= a && thr < b) {
            thr = a;
        }
        Some((k, thr))
    }
}

/// Arm units in a label-free order: lexicographic in covariates, then index.
fn canonical_units(ds: &Dataset, arm: Arm) -> Vec<usize> {
    let mut units = ds.units(arm).to_vec();
    units.sort_by(|&a, &b| {
        ds.x(a)
            .iter()
            .zip(ds.x(b))
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    units
}

/// Grows one tree from an explicit subsample.
pub fn grow_tree(ds: &Dataset, subsample: &[usize], cfg: &ForestConfig, rng: ChaCha8Rng) -> HonestTree {
    let d = ds.d();
    let mut g = Grower {
        ds,
        cfg,
        rng,
        nodes: Vec::new(),
        leaves: Vec::new(),
    };
    let mut units = subsample.to_vec();
    g.grow(
        &mut units,
        vec![f64::NEG_INFINITY; d],
        vec![f64::INFINITY; d],
        vec![0; d],
    );
    let mut subsample = subsample.to_vec();
    subsample.sort_unstable();
    HonestTree {
        subsample,
        nodes: g.nodes,
        leaves: g.leaves,
    }
}

/// Grows `cfg.trees` honest trees on size-`s` subsamples of `arm`.
///
/// Tree `b` draws from its own stream keyed by `(seed, arm, b)`, so the
/// result does not depend on thread count.
pub fn build_forest(ds: &Dataset, arm: Arm, cfg: &ForestConfig) -> Result<Forest> {
    cfg.validate(ds.n0(), ds.n1())?;
    Ok(build_forest_unchecked(ds, arm, cfg))
}

pub(crate) fn build_forest_unchecked(ds: &Dataset, arm: Arm, cfg: &ForestConfig) -> Forest {
    let canon = canonical_units(ds, arm);
    let trees = (0..cfg.trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[arm.flag() as u64, b as u64]));
            let picks = index::sample(&mut rng, canon.len(), cfg.s.min(canon.len()));
            let sub: Vec<usize> = picks.iter().map(|p| canon[p]).collect();
            grow_tree(ds, &sub, cfg, rng)
        })
        .collect();
    Forest {
        arm,
        config: cfg.clone(),
        trees,
    }
}

/// Forests over the control and treated arms.
pub fn build_forest_pair(ds: &Dataset, cfg: &ForestConfig) -> Result<(Forest, Forest)> {
    Ok((build_forest(ds, Arm::Control, cfg)?, build_forest(ds, Arm::Treated, cfg)?))
}

/// `w(i <- j) = B^-1 sum_b 1(j in I_b, X_j in L_b(X_i)) / |L_b(X_i)|`, using
/// the forest over the arm opposite to `i`.
pub fn forest_weights(f0: &Forest, f1: &Forest, ds: &Dataset) -> Result<SmoothingMatrix> {
    if f0.arm != Arm::Control || f1.arm != Arm::Treated {
        return Err(Error::InvalidParameter("forest_weights expects (control, treated) forests".into()));
    }
    let n = ds.n();
    let rows: Vec<(Vec<(usize, f64)>, bool)> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0f64; n], Vec::<usize>::new()),
            |(acc, touched), i| {
                let f = if ds.arm(i) == Arm::Treated { f0 } else { f1 };
                let x = ds.x(i);
                for tree in &f.trees {
                    let leaf = tree.leaf_of(x);
                    assert!(!leaf.members.is_empty(), "empty leaf in honest tree");
                    let w = 1.0 / leaf.members.len() as f64;
                    for &j in &leaf.members {
                        if acc[j] == 0.0 {
                            touched.push(j);
                        }
                        acc[j] += w;
                    }
                }
                touched.sort_unstable();
                let b = f.trees.len() as f64;
                let row = touched.iter().map(|&j| (j, acc[j] / b)).collect();
                for &j in touched.iter() {
                    acc[j] = 0.0;
                }
                touched.clear();
                (row, false)
            },
        )
        .collect();
    SmoothingMatrix::from_row_results(ds, rows)
}

/// Leaf-geometry summary of a forest over a set of query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafDiameterProfile {
    pub trees: usize,
    pub queries: usize,
    /// Mean over queries and trees of the Euclidean diameter of `L(x)`
    /// clipped to the bounding box of the query sample.
    pub mean_diameter: f64,
    /// Standard deviation across trees of the per-tree mean diameter.
    pub mean_diameter_tree_sd: f64,
    pub max_diameter: f64,
    pub mean_axis_diameter: Vec<f64>,
    pub per_tree_mean: Vec<f64>,
    pub per_tree_max: Vec<f64>,
    /// Mean over trees of `1 / min_leaf |L|`.
    pub mean_inverse_min_occupancy: f64,
    pub min_occupancy: usize,
}

pub fn leaf_diameter_profile(f: &Forest, support: &[Vec<f64>]) -> Result<LeafDiameterProfile> {
    if support.is_empty() {
        return Err(Error::InvalidParameter("support sample is empty".into()));
    }
    let d = support[0].len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for x in support {
        if x.len() != d {
            return Err(Error::InvalidParameter("support points differ in dimension".into()));
        }
        for p in 0..d {
            lo[p] = lo[p].min(x[p]);
            hi[p] = hi[p].max(x[p]);
        }
    }
    let per_tree: Vec<(f64, f64, Vec<f64>, usize)> = f
        .trees
        .par_iter()
        .map(|t| {
            let widths: Vec<Vec<f64>> = t
                .leaves
                .iter()
                .map(|l| (0..d).map(|p| (l.hi[p].min(hi[p]) - l.lo[p].max(lo[p])).max(0.0)).collect())
                .collect();
            let mut sum = 0.0;
            let mut max = 0.0f64;
            let mut axis = vec![0.0; d];
            for x in support {
                let w = &widths[t.leaf_index(x)];
                let diam = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                sum += diam;
                max = max.max(diam);
                for p in 0..d {
                    axis[p] += w[p];
                }
            }
            let q = support.len() as f64;
            axis.iter_mut().for_each(|a| *a /= q);
            let min_occ = t.leaves.iter().map(|l| l.members.len()).min().unwrap_or(0);
            (sum / q, max, axis, min_occ)
        })
        .collect();
    let b = per_tree.len() as f64;
    let per_tree_mean: Vec<f64> = per_tree.iter().map(|t| t.0).collect();
    let (mean, var) = crate::numeric::mean_var(&per_tree_mean);
    let mut mean_axis = vec![0.0; d];
    for t in &per_tree {
        for p in 0..d {
            mean_axis[p] += t.2[p] / b;
        }
    }
    Ok(LeafDiameterProfile {
        trees: per_tree.len(),
        queries: support.len(),
        mean_diameter: mean,
        mean_diameter_tree_sd: var.sqrt(),
        max_diameter: per_tree.iter().map(|t| t.1).fold(0.0, f64::max),
        mean_axis_diameter: mean_axis,
        per_tree_max: per_tree.iter().map(|t| t.1).collect(),
        per_tree_mean,
        mean_inverse_min_occupancy: per_tree.iter().map(|t| 1.0 / t.3 as f64).sum::<f64>() / b,
        min_occupancy: per_tree.iter().map(|t| t.3).min().unwrap_or(0),
    })
}
