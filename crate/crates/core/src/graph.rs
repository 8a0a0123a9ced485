//! Neighbourhood graph and single-source geodesics.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rayon::prelude::*;

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::rng;

mod kdtree;

pub use kdtree::KdTree;

/// Weighted undirected graph. Adjacency lists are sorted by neighbour index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    /// Build from an undirected edge list. Rejects self loops, duplicate
    /// edges and weights that are not finite and positive.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n_nodes];
        for &(u, v, w) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) out of range"
                )));
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self loop at {u}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) has weight {w}"
                )));
            }
            adjacency[u].push((v, w));
            adjacency[v].push((u, w));
        }
        for (u, list) in adjacency.iter_mut().enumerate() {
            list.sort_by_key(|&(v, _)| v);
            if list.windows(2).any(|p| p[0].0 == p[1].0) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate edge at node {u}"
                )));
            }
        }
        Ok(NeighborGraph { adjacency })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        let list = &self.adjacency[u];
        list.binary_search_by_key(&v, |&(x, _)| x)
            .ok()
            .map(|i| list[i].1)
    }

    /// Connected components, each sorted; components ordered by smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.n_nodes() > 0 && self.components().len() == 1
    }

    /// The largest component, ties going to the one with the smallest node.
    pub fn largest_component(&self) -> Vec<usize> {
        self.components().into_iter().fold(
            Vec::new(),
            |best, c| if c.len() > best.len() { c } else { best },
        )
    }

    /// Induced subgraph on `nodes`; node `nodes[i]` becomes `i`.
    pub fn subgraph(&self, nodes: &[usize]) -> NeighborGraph {
        let mut index = vec![usize::MAX; self.n_nodes()];
        for (i, &u) in nodes.iter().enumerate() {
            index[u] = i;
        }
        let adjacency = nodes
            .iter()
            .map(|&u| {
                let mut list: Vec<(usize, f64)> = self.adjacency[u]
                    .iter()
                    .filter(|&&(v, _)| index[v] != usize::MAX)
                    .map(|&(v, w)| (index[v], w))
                    .collect();
                list.sort_by_key(|&(v, _)| v);
                list
            })
            .collect();
        NeighborGraph { adjacency }
    }
}

/// Options for [`build_knn_graph_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct KnnOptions {
    /// Perturb the points by about `1e-10` of the bounding box diagonal
    /// instead of rejecting exact duplicates.
    pub jitter: Option<u64>,
}

/// kNN graph with default options: duplicates are an error.
pub fn build_knn_graph(cloud: &PointCloud, k: usize) -> Result<NeighborGraph> {
    build_knn_graph_with(cloud, k, KnnOptions::default())
}

/// Symmetric kNN graph: `i -- j` whenever either selects the other.
/// Equidistant candidates are ranked by index.
pub fn build_knn_graph_with(
    cloud: &PointCloud,
    k: usize,
    opts: KnnOptions,
) -> Result<NeighborGraph> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k < N, got k={k}, N={n}"
        )));
    }
    let dim = cloud.dim();
    let mut data: Vec<f64> = (0..n)
        .flat_map(|i| (0..dim).map(move |j| (i, j)))
        .map(|(i, j)| cloud.points[(i, j)])
        .collect();
    if let Some(seed) = opts.jitter {
        jitter(&mut data, dim, seed);
    }
    let lists = knn_lists(&data, dim, k);
    let mut edges = Vec::with_capacity(n * k);
    let mut seen = std::collections::HashSet::with_capacity(n * k);
    for (i, list) in lists.iter().enumerate() {
        for &(j, d) in list {
            if d <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "samples {i} and {j} coincide; pass --jitter to perturb duplicates"
                )));
            }
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                edges.push((key.0, key.1, d));
            }
        }
    }
    NeighborGraph::from_edges(n, &edges)
}

fn jitter(data: &mut [f64], dim: usize, seed: u64) {
    let n = data.len() / dim;
    let mut diag = 0.0;
    for j in 0..dim {
        let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            let v = data[i * dim + j];
            (lo.min(v), hi.max(v))
        });
        diag += (hi - lo).powi(2);
    }
    let scale = 1e-10 * diag.sqrt().max(1.0);
    let mut r = rng::seeded(seed);
    for v in data.iter_mut() {
        *v += scale * (2.0 * rng::unit(&mut r) - 1.0);
    }
}

/// Exact k nearest neighbours of every row (excluding itself) as
/// `(index, distance)` sorted by `(distance, index)`.
fn knn_lists(data: &[f64], dim: usize, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = data.len() / dim;
    if dim <= 16 {
        let tree = KdTree::new(data, dim);
        (0..n)
            .into_par_iter()
            .map(|i| tree.nearest(&data[i * dim..(i + 1) * dim], k, Some(i)))
            .collect()
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = &data[i * dim..(i + 1) * dim];
                let mut all: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (sq_dist(xi, &data[j * dim..(j + 1) * dim]), j))
                    .collect();
                let cmp =
                    |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                all.select_nth_unstable_by(k - 1, cmp);
                all.truncate(k);
                all.sort_by(cmp);
                all.into_iter().map(|(d, j)| (j, d.sqrt())).collect()
            })
            .collect()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Single-source geodesic distances and predecessors.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPathTree {
    pub source: usize,
    /// `+inf` for unreachable nodes.
    pub dist: Vec<f64>,
    /// `None` at the source and at unreachable nodes.
    pub parent: Vec<Option<usize>>,
    /// Reachable nodes in the order Dijkstra settled them; parents always
    /// precede their children.
    pub order: Vec<usize>,
}

impl ShortestPathTree {
    pub fn is_reachable(&self, v: usize) -> bool {
        self.dist[v].is_finite()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // reversed: BinaryHeap is a max-heap and we want (smallest dist, smallest node)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from `source`. Equal tentative distances pop the lower index
/// first and a parent is only replaced on strict improvement.
pub fn shortest_paths_from(graph: &NeighborGraph, source: usize) -> Result<ShortestPathTree> {
    let n = graph.n_nodes();
    if source >= n {
        return Err(Error::InvalidArgument(format!(
            "source {source} out of range (N={n})"
        )));
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![None; n];
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry {
        dist: 0.0,
        node: source,
    });
    while let Some(Entry { dist: d, node: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        order.push(u);
        for &(v, w) in graph.neighbors(u) {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                parent[v] = Some(u);
                heap.push(Entry { dist: nd, node: v });
            }
        }
    }
    Ok(ShortestPathTree {
        source,
        dist,
        parent,
        order,
    })
}

/// Node sequence from the tree's source to `target`.
pub fn extract_path(tree: &ShortestPathTree, target: usize) -> Result<Vec<usize>> {
    if target >= tree.dist.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range"
        )));
    }
    if !tree.is_reachable(target) {
        return Err(Error::NoPath {
            source_node: tree.source,
            target,
        });
    }
    let mut path = vec![target];
    let mut cur = target;
    while let Some(p) = tree.parent[cur] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    Ok(path)
}
