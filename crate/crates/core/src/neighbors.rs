//! Exact neighbor queries: brute force and a k-d tree that returns the same
//! answers bit for bit.
//!
//! Candidates are ordered by `(squared distance, unit index)`, so equal
//! distances resolve to the lower unit index in both paths.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::numeric::squared_distance;

/// How neighbor candidates are located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborSearch {
    #[default]
    BruteForce,
    KdTree,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub dist2: f64,
    pub id: usize,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.id.cmp(&other.id))
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// A point cloud with unit ids, row-major coordinates.
#[derive(Debug, Clone)]
pub struct PointSet {
    d: usize,
    coords: Vec<f64>,
    ids: Vec<usize>,
}

impl PointSet {
    pub fn new(d: usize) -> Self {
        PointSet {
            d,
            coords: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn push(&mut self, id: usize, x: &[f64]) {
        debug_assert_eq!(x.len(), self.d);
        self.coords.extend_from_slice(x);
        self.ids.push(id);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.coords[k * self.d..(k + 1) * self.d]
    }

    pub fn id(&self, k: usize) -> usize {
        self.ids[k]
    }
}

/// The `k` nearest points, sorted ascending by `(dist2, id)`.
pub fn brute_knn(points: &PointSet, query: &[f64], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = (0..points.len())
        .map(|p| Neighbor {
            dist2: squared_distance(query, points.point(p)),
            id: points.id(p),
        })
        .collect();
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    if k < all.len() {
        all.select_nth_unstable(k - 1);
        all.truncate(k);
    }
    all.sort_unstable();
    all
}

/// Ids of points with `max_p |x_p - q_p| <= radius`, ascending by id.
pub fn brute_range_linf(points: &PointSet, query: &[f64], radius: f64) -> Vec<usize> {
    let mut out: Vec<usize> = (0..points.len())
        .filter(|&p| linf(points.point(p), query) <= radius)
        .map(|p| points.id(p))
        .collect();
    out.sort_unstable();
    out
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

const LEAF_SIZE: usize = 16;

enum KdNode {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        left: usize,
        right: usize,
    },
}

/// Static k-d tree over a [`PointSet`].
pub struct KdTree {
    points: PointSet,
    nodes: Vec<KdNode>,
    bounds: Vec<(Vec<f64>, Vec<f64>)>,
}

impl KdTree {
    pub fn build(points: PointSet) -> Self {
        let d = points.d;
        let n = points.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut tree = KdTree {
            points: PointSet::new(d),
            nodes: Vec::new(),
            bounds: Vec::new(),
        };
        if n > 0 {
            tree.build_node(&points, &mut order, 0, n);
        }
        // Reorder storage so leaves are contiguous.
        let mut reordered = PointSet::new(d);
        for &k in &order {
            reordered.push(points.id(k), points.point(k));
        }
        tree.points = reordered;
        tree
    }

    fn build_node(&mut self, pts: &PointSet, order: &mut [usize], start: usize, end: usize) -> usize {
        let d = pts.d;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &k in &order[start..end] {
            for (p, v) in pts.point(k).iter().enumerate() {
                lo[p] = lo[p].min(*v);
                hi[p] = hi[p].max(*v);
            }
        }
        let idx = self.nodes.len();
        self.nodes.push(KdNode::Leaf { start, end });
        self.bounds.push((lo.clone(), hi.clone()));
        if end - start <= LEAF_SIZE {
            return idx;
        }
        let axis = (0..d)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] <= lo[axis] {
            return idx;
        }
        let mid = start + (end - start) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts.point(a)[axis].total_cmp(&pts.point(b)[axis])
        });
        let left = self.build_node(pts, order, start, mid);
        let right = self.build_node(pts, order, mid, end);
        self.nodes[idx] = KdNode::Split { left, right };
        idx
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn min_dist2(lo: &[f64], hi: &[f64], q: &[f64]) -> f64 {
        let mut s = 0.0;
        for p in 0..q.len() {
            let gap = if q[p] < lo[p] {
                lo[p] - q[p]
            } else if q[p] > hi[p] {
                q[p] - hi[p]
            } else {
                0.0
            };
            s += gap * gap;
        }
        s
    }

    /// Same contract as [`brute_knn`].
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<Neighbor> {
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, query, k, &mut heap);
        let mut out = heap.into_vec();
        out.sort_unstable();
        out
    }

    fn knn_node(&self, idx: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Neighbor>) {
        let (lo, hi) = &self.bounds[idx];
        if heap.len() == k {
            // Only prune strictly farther boxes; an equal distance may still
            // hold a lower id.
            let worst = heap.peek().map(|n| n.dist2).unwrap_or(f64::INFINITY);
            if Self::min_dist2(lo, hi, q) * (1.0 - 4.0 * f64::EPSILON) > worst {
                return;
            }
        }
        match &self.nodes[idx] {
            KdNode::Leaf { start, end } => {
                for p in *start..*end {
                    let cand = Neighbor {
                        dist2: squared_distance(q, self.points.point(p)),
                        id: self.points.id(p),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            KdNode::Split { left, right, .. } => {
                let dl = Self::min_dist2(&self.bounds[*left].0, &self.bounds[*left].1, q);
                let dr = Self::min_dist2(&self.bounds[*right].0, &self.bounds[*right].1, q);
                if dl <= dr {
                    self.knn_node(*left, q, k, heap);
                    self.knn_node(*right, q, k, heap);
                } else {
                    self.knn_node(*right, q, k, heap);
                    self.knn_node(*left, q, k, heap);
                }
            }
        }
    }

    /// Same contract as [`brute_range_linf`].
    pub fn range_linf(&self, query: &[f64], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.is_empty() {
            self.range_node(0, query, radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn range_node(&self, idx: usize, q: &[f64], r: f64, out: &mut Vec<usize>) {
        let (lo, hi) = &self.bounds[idx];
        for p in 0..q.len() {
            if q[p] < lo[p] - r || q[p] > hi[p] + r {
                return;
            }
        }
        match &self.nodes[idx] {
            KdNode::Leaf { start, end } => {
                for p in *start..*end {
                    if linf(self.points.point(p), q) <= r {
                        out.push(self.points.id(p));
                    }
                }
            }
            KdNode::Split { left, right, .. } => {
                self.range_node(*left, q, r, out);
                self.range_node(*right, q, r, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, d: usize, seed: u64, grid: bool) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = PointSet::new(d);
        for i in 0..n {
            let x: Vec<f64> = (0..d)
                .map(|_| {
                    if grid {
                        (rng.random_range(0..5) as f64) / 4.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            ps.push(i * 3 + 1, &x);
        }
        ps
    }

    #[test]
    fn knn_matches_brute_force_with_ties() {
        for (d, grid) in [(1, false), (2, false), (3, true), (2, true)] {
            let ps = cloud(300, d, 11 + d as u64, grid);
            let tree = KdTree::build(ps.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..50 {
                let q: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                for k in [1, 7, 40, 300] {
                    assert_eq!(tree.knn(&q, k), brute_knn(&ps, &q, k));
                }
            }
        }
    }

    #[test]
    fn range_matches_brute_force() {
        let ps = cloud(400, 2, 9, false);
        let tree = KdTree::build(ps.clone());
        for r in [0.0, 0.05, 0.3, 2.0] {
            let q = [0.4, 0.6];
            assert_eq!(tree.range_linf(&q, r), brute_range_linf(&ps, &q, r));
        }
    }

    #[test]
    fn ties_resolve_to_lower_id() {
        let mut ps = PointSet::new(1);
        ps.push(9, &[1.0]);
        ps.push(2, &[-1.0]);
        ps.push(5, &[1.0]);
        let nn = brute_knn(&ps, &[0.0], 2);
        assert_eq!(nn.iter().map(|n| n.id).collect::<Vec<_>>(), vec![2, 5]);
    }

    proptest! {
        #[test]
        fn knn_agrees(seed in 0u64..1000, k in 1usize..20) {
            let ps = cloud(60, 2, seed, seed % 2 == 0);
            let tree = KdTree::build(ps.clone());
            let q = [0.5, 0.25];
            prop_assert_eq!(tree.knn(&q, k), brute_knn(&ps, &q, k));
        }
    }
}
