//! Static KD-tree over sphere centers.
//!
//! Construction median-splits on the dimension of widest spread and is
//! deterministic for a given input order. The tree is immutable; callers
//! rebuild it when positions change.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::space::Point;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct SpatialIndex {
    dim: usize,
    coords: Vec<f64>,
    /// Point ids, permuted so every node owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// A query hit: point id (input position) and Euclidean distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

impl Neighbor {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
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
        self.cmp_key(other)
    }
}

impl SpatialIndex {
    pub fn build(points: &[Point]) -> Self {
        let dim = points.first().map_or(0, Point::dim);
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            assert_eq!(p.dim(), dim, "all centers must share one dimension");
            coords.extend_from_slice(p.coords());
        }
        Self::from_flat(dim, coords)
    }

    /// Builds from row-major coordinates (`coords.len() == n * dim`).
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Self {
        let n = if dim == 0 { 0 } else { coords.len() / dim };
        assert_eq!(n * dim, coords.len(), "coordinate buffer is not a multiple of dim");
        let mut index = Self {
            dim,
            coords,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            index.build_node(0, n);
        }
        index
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, id: usize) -> &[f64] {
        &self.coords[id * self.dim..(id + 1) * self.dim]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        self.nodes.push(Node::Leaf { start, end });

        let dim = self.dim;
        let coords = &self.coords;
        let mut axis = 0;
        let mut widest = f64::NEG_INFINITY;
        for d in 0..dim {
            let (lo, hi) = self.order[start..end]
                .iter()
                .map(|&id| coords[id * dim + d])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            if hi - lo > widest {
                widest = hi - lo;
                axis = d;
            }
        }

        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * dim + axis]
                .total_cmp(&coords[b * dim + axis])
                .then(a.cmp(&b))
        });
        let value = coords[self.order[mid] * dim + axis];
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[slot] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    fn distance_to(&self, id: usize, q: &[f64]) -> f64 {
        self.point(id)
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Visits every point within `rho` of `q` in unspecified order.
    pub fn for_each_within(&self, q: &[f64], rho: f64, mut visit: impl FnMut(usize, f64)) {
        if self.is_empty() {
            return;
        }
        debug_assert_eq!(q.len(), self.dim);
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &id in &self.order[start..end] {
                        let d = self.distance_to(id, q);
                        if d <= rho {
                            visit(id, d);
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = q[axis] - value;
                    if diff <= rho {
                        stack.push(left);
                    }
                    if -diff <= rho {
                        stack.push(right);
                    }
                }
            }
        }
    }

    /// True if any point within `rho` of `q` satisfies `pred`.
    pub fn any_within(&self, q: &[f64], rho: f64, mut pred: impl FnMut(usize, f64) -> bool) -> bool {
        if self.is_empty() {
            return false;
        }
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &id in &self.order[start..end] {
                        let d = self.distance_to(id, q);
                        if d <= rho && pred(id, d) {
                            return true;
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = q[axis] - value;
                    if diff <= rho {
                        stack.push(left);
                    }
                    if -diff <= rho {
                        stack.push(right);
                    }
                }
            }
        }
        false
    }

    /// All points with distance `<= rho`, ascending by distance then id.
    pub fn within_radius(&self, q: &[f64], rho: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        self.for_each_within(q, rho, |id, distance| out.push(Neighbor { id, distance }));
        out.sort_unstable();
        out
    }

    /// The `k` nearest points (fewer if the index is smaller), same ordering
    /// as [`within_radius`](Self::within_radius).
    pub fn nearest_k(&self, q: &[f64], k: usize) -> Vec<Neighbor> {
        if self.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, q, k, &mut heap);
        let mut out = heap.into_vec();
        out.sort_unstable();
        out
    }

    fn knn_node(&self, node: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let cand = Neighbor {
                        id,
                        distance: self.distance_to(id, q),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, q, k, heap);
                let worst = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().map_or(f64::INFINITY, |n| n.distance)
                };
                if diff.abs() <= worst {
                    self.knn_node(far, q, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vec<f64>], q: &[f64]) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .map(|(id, p)| Neighbor {
                id,
                distance: p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
            })
            .collect();
        all.sort_by(|a, b| a.distance.partial_cmp(&b.distance).unwrap().then(a.id.cmp(&b.id)));
        all
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect()
    }

    fn index_of(points: &[Vec<f64>]) -> SpatialIndex {
        let pts: Vec<Point> = points.iter().cloned().map(Point::from_vec_unchecked).collect();
        SpatialIndex::build(&pts)
    }

    #[test]
    fn empty_and_single() {
        let empty = SpatialIndex::build(&[]);
        assert!(empty.is_empty());
        assert!(empty.nearest_k(&[0.5], 3).is_empty());
        assert!(empty.within_radius(&[0.5], 1.0).is_empty());

        let one = index_of(&[vec![0.2, 0.3]]);
        assert_eq!(one.len(), 1);
        let hit = one.within_radius(&[0.2, 0.3], 0.0);
        assert_eq!(hit, vec![Neighbor { id: 0, distance: 0.0 }]);
    }

    #[test]
    fn duplicates_are_kept_with_distinct_ids() {
        let idx = index_of(&[vec![0.4, 0.4], vec![0.4, 0.4], vec![0.9, 0.1]]);
        let hits = idx.within_radius(&[0.4, 0.4], 0.0);
        assert_eq!(hits.iter().map(|n| n.id).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn diameter_radius_returns_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = random_points(&mut rng, 200, 3);
        let idx = index_of(&pts);
        assert_eq!(idx.within_radius(&[0.0, 0.0, 0.0], 3f64.sqrt()).len(), 200);
        let all = idx.nearest_k(&[0.5, 0.5, 0.5], 500);
        assert_eq!(all, brute(&pts, &[0.5, 0.5, 0.5]));
    }

    #[test]
    fn nearest_one_finds_the_query_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = random_points(&mut rng, 100, 2);
        let idx = index_of(&pts);
        let hit = idx.nearest_k(&pts[17], 1);
        assert_eq!(hit, vec![Neighbor { id: 17, distance: 0.0 }]);
    }

    #[test]
    fn thousand_points_knn_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = random_points(&mut rng, 1000, 3);
        let idx = index_of(&pts);
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            let expected: Vec<_> = brute(&pts, &q).into_iter().take(5).collect();
            assert_eq!(idx.nearest_k(&q, 5), expected);
        }
    }

    #[test]
    fn ties_break_by_id() {
        let pts = vec![vec![0.75], vec![0.25], vec![0.75], vec![0.25]];
        let idx = index_of(&pts);
        let ids: Vec<_> = idx.nearest_k(&[0.5], 3).iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn construction_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts = random_points(&mut rng, 300, 4);
        let a = index_of(&pts);
        let b = index_of(&pts);
        assert_eq!(a.order, b.order);
    }
}
