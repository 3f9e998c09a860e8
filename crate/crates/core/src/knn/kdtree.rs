//! Bucketed kd-tree with exact k-nearest search under a Minkowski metric.
//!
//! Points are permuted so every node owns a contiguous range; each node keeps
//! the tight bounding box of its points, which gives the pruning lower bound.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Metric;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct KdTree {
    dims: usize,
    /// Row-major coordinates in tree order.
    points: Vec<f64>,
    /// Original position of each tree-ordered point.
    order: Vec<usize>,
    nodes: Vec<Node>,
    /// `lo`/`hi` corners per node, `dims` values each.
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Heap entry ordered by `(distance, row_id)`, so the heap top is the worst kept neighbor.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub dist: f64,
    pub row_id: u64,
    pub slot: usize,
}

impl Candidate {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.row_id.cmp(&other.row_id))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Bounded max-heap of the best `k` candidates seen so far.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    /// Distance a subtree must not exceed to still matter.
    fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |c| c.dist)
        }
    }

    pub fn into_sorted(self) -> Vec<Candidate> {
        self.heap.into_sorted_vec()
    }
}

impl KdTree {
    pub fn build(dims: usize, coords: &[f64], leaf_size: usize) -> Self {
        let n = coords.len().checked_div(dims).unwrap_or(0);
        let mut tree = KdTree {
            dims,
            points: Vec::with_capacity(coords.len()),
            order: (0..n).collect(),
            nodes: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
        };
        let mut order = std::mem::take(&mut tree.order);
        if n > 0 {
            tree.build_node(coords, &mut order, 0, n, leaf_size.max(1));
        }
        for &p in &order {
            tree.points
                .extend_from_slice(&coords[p * dims..(p + 1) * dims]);
        }
        tree.order = order;
        tree
    }

    fn build_node(
        &mut self,
        coords: &[f64],
        order: &mut [usize],
        start: usize,
        end: usize,
        leaf_size: usize,
    ) -> usize {
        let d = self.dims;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &p in &order[start..end] {
            for j in 0..d {
                let v = coords[p * d + j];
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        // Widest axis; a zero-spread box still splits by position.
        let (split_dim, _) =
            (0..d)
                .map(|j| (j, hi[j] - lo[j]))
                .fold((0, f64::NEG_INFINITY), |best, cur| {
                    if cur.1 > best.1 {
                        cur
                    } else {
                        best
                    }
                });

        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        self.lo.extend_from_slice(&lo);
        self.hi.extend_from_slice(&hi);

        if end - start <= leaf_size {
            return id;
        }
        let mid = start + (end - start) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * d + split_dim].total_cmp(&coords[b * d + split_dim])
        });
        let left = self.build_node(coords, order, start, mid, leaf_size);
        let right = self.build_node(coords, order, mid, end, leaf_size);
        self.nodes[id] = Node::Split { left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { start, end } => Some((*start, *end)),
            Node::Split { .. } => None,
        })
    }

    /// Original (pre-permutation) position of tree slot `slot`.
    pub fn original(&self, slot: usize) -> usize {
        self.order[slot]
    }

    /// Lower bound on the reduced distance from `q` to any point in `node`.
    ///
    /// Each per-axis gap is ≤ the matching per-axis term of any contained point,
    /// and the sum runs in the same axis order as [`Metric::reduced`], so the
    /// bound never exceeds a true distance even after rounding.
    fn box_bound(&self, node: usize, q: &[f64], metric: Metric) -> f64 {
        let d = self.dims;
        let lo = &self.lo[node * d..(node + 1) * d];
        let hi = &self.hi[node * d..(node + 1) * d];
        let mut acc = 0.0;
        for j in 0..d {
            let gap = if q[j] < lo[j] {
                lo[j] - q[j]
            } else if q[j] > hi[j] {
                q[j] - hi[j]
            } else {
                0.0
            };
            acc += metric.term(gap);
        }
        acc
    }

    /// Visits every subtree that can still hold a candidate no worse than the current k-th.
    /// Subtrees whose bound equals the k-th distance are still searched so that the
    /// row-id tie-break stays exact.
    pub fn search(&self, q: &[f64], metric: Metric, row_ids: &[u64], top: &mut TopK) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![(0usize, self.box_bound(0, q, metric))];
        while let Some((node, bound)) = stack.pop() {
            if bound > top.bound() {
                continue;
            }
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for slot in start..end {
                        let p = &self.points[slot * self.dims..(slot + 1) * self.dims];
                        top.offer(Candidate {
                            dist: metric.reduced(p, q),
                            row_id: row_ids[slot],
                            slot,
                        });
                    }
                }
                Node::Split { left, right } => {
                    let bl = self.box_bound(left, q, metric);
                    let br = self.box_bound(right, q, metric);
                    // Push the farther child first so the nearer one is searched first.
                    if bl <= br {
                        stack.push((right, br));
                        stack.push((left, bl));
                    } else {
                        stack.push((left, bl));
                        stack.push((right, br));
                    }
                }
            }
        }
    }
}
