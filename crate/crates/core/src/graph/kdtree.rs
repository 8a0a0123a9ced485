use std::collections::BinaryHeap;

use super::sq_dist;

const LEAF_SIZE: usize = 16;

#[derive(Debug)]
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

/// Exact kd-tree over row-major points of arbitrary dimension.
#[derive(Debug)]
pub struct KdTree<'a> {
    data: &'a [f64],
    dim: usize,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(PartialEq)]
struct Cand(f64, usize);

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        let n = data.len() / dim;
        let mut tree = KdTree {
            data,
            dim,
            perm: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    fn coord(&self, i: usize, axis: usize) -> f64 {
        self.data[i * self.dim + axis]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split on the widest axis at the median
        let axis = (0..self.dim)
            .map(|a| {
                let (lo, hi) = self.perm[start..end].iter().fold(
                    (f64::INFINITY, f64::NEG_INFINITY),
                    |(lo, hi), &i| {
                        let v = self.coord(i, a);
                        (lo.min(v), hi.max(v))
                    },
                );
                (hi - lo, a)
            })
            .fold(
                (f64::NEG_INFINITY, 0),
                |best, c| if c.0 > best.0 { c } else { best },
            )
            .1;
        let mid = start + (end - start) / 2;
        let (data, dim) = (self.data, self.dim);
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            data[a * dim + axis].total_cmp(&data[b * dim + axis])
        });
        let value = self.coord(self.perm[mid], axis);
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest rows to `query` as `(index, distance)`, ordered by
    /// `(distance, index)`, optionally skipping one row.
    pub fn nearest(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if !self.nodes.is_empty() && k > 0 {
            self.search(0, query, k, exclude, &mut heap);
        }
        let mut out: Vec<Cand> = heap.into_vec();
        out.sort();
        out.into_iter().map(|Cand(d, i)| (i, d.sqrt())).collect()
    }

    fn search(
        &self,
        node: usize,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Cand>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Cand(sq_dist(q, &self.data[i * self.dim..(i + 1) * self.dim]), i);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
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
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, exclude, heap);
                // equal distances must still be explored for index tie-breaks
                if heap.len() < k || diff * diff <= heap.peek().unwrap().0 {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }
}
