//! Stochastic shortest path covering and its empirical scaling laws.
//!
//! [`sspc`] repeatedly picks a random uncovered sample, grows a shortest path
//! tree from it, and keeps the shortest path that swallows the most uncovered
//! samples. The number of paths `P` follows `P = alpha * N^gamma` and the
//! uncovered count after `n` iterations follows `R(n) = N * exp(-lambda * n)`;
//! [`fit_power_law`] and [`fit_decay`] estimate those exponents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, NeighborGraph};
use crate::rng;

/// A shortest path with the cumulative geodesic length at each node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPath {
    pub nodes: Vec<usize>,
    /// `arc[0] = 0`, nondecreasing.
    pub arc: Vec<f64>,
}

impl GeodesicPath {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.arc.last().copied().unwrap_or(0.0)
    }

    /// Path from `tree.source` to `target`, with arc lengths from the tree.
    pub fn from_tree(tree: &graph::ShortestPathTree, target: usize) -> Result<Self> {
        let nodes = graph::extract_path(tree, target)?;
        let arc = nodes.iter().map(|&v| tree.dist[v]).collect();
        Ok(GeodesicPath { nodes, arc })
    }
}

/// Incidence of one sample on one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incidence {
    pub path: usize,
    pub offset: f64,
}

/// The path set produced by [`sspc`], plus compensation paths added later.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCover {
    pub paths: Vec<GeodesicPath>,
    /// Per sample, the paths through it with the sample's arc offset.
    pub node_incidence: Vec<Vec<Incidence>>,
    /// Uncovered count after each covering iteration.
    pub history: Vec<usize>,
    pub seed: u64,
}

impl PathCover {
    pub fn from_paths(
        n_nodes: usize,
        paths: Vec<GeodesicPath>,
        history: Vec<usize>,
        seed: u64,
    ) -> Self {
        let mut node_incidence = vec![Vec::new(); n_nodes];
        for (p, path) in paths.iter().enumerate() {
            for (&v, &offset) in path.nodes.iter().zip(&path.arc) {
                node_incidence[v].push(Incidence { path: p, offset });
            }
        }
        PathCover {
            paths,
            node_incidence,
            history,
            seed,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.node_incidence.len()
    }

    /// Append a path (e.g. for compensation) and update the incidence lists.
    pub fn push_path(&mut self, path: GeodesicPath) {
        let p = self.paths.len();
        for (&v, &offset) in path.nodes.iter().zip(&path.arc) {
            self.node_incidence[v].push(Incidence { path: p, offset });
        }
        self.paths.push(path);
    }

    /// Number of paths produced by the covering loop itself.
    pub fn covering_paths(&self) -> usize {
        self.history.len()
    }

    /// `[N, R(1), R(2), ...]`, the series [`fit_decay`] expects.
    pub fn decay_series(&self) -> Vec<usize> {
        std::iter::once(self.n_nodes())
            .chain(self.history.iter().copied())
            .collect()
    }

    /// Samples that lie on no path.
    pub fn uncovered(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&v| self.node_incidence[v].is_empty())
            .collect()
    }

    /// Indices of single-node paths; they constrain nothing.
    pub fn degenerate_paths(&self) -> Vec<usize> {
        (0..self.paths.len())
            .filter(|&p| self.paths[p].len() < 2)
            .collect()
    }

    pub fn to_json(&self) -> CoverJson {
        CoverJson {
            schema_version: crate::SCHEMA_VERSION,
            paths: self.paths.iter().map(|p| p.nodes.clone()).collect(),
            arc: self.paths.iter().map(|p| p.arc.clone()).collect(),
            history: self.history.clone(),
            seed: self.seed,
        }
    }

    pub fn from_json(n_nodes: usize, json: &CoverJson) -> Result<Self> {
        if json.paths.len() != json.arc.len() {
            return Err(Error::Format("paths and arc have different lengths".into()));
        }
        let mut paths = Vec::with_capacity(json.paths.len());
        for (nodes, arc) in json.paths.iter().zip(&json.arc) {
            if nodes.len() != arc.len() || nodes.iter().any(|&v| v >= n_nodes) {
                return Err(Error::Format("malformed path entry".into()));
            }
            paths.push(GeodesicPath {
                nodes: nodes.clone(),
                arc: arc.clone(),
            });
        }
        Ok(PathCover::from_paths(
            n_nodes,
            paths,
            json.history.clone(),
            json.seed,
        ))
    }
}

/// Serialized form of a [`PathCover`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverJson {
    pub schema_version: u32,
    pub paths: Vec<Vec<usize>>,
    pub arc: Vec<Vec<f64>>,
    pub history: Vec<usize>,
    pub seed: u64,
}

/// Stochastic shortest path covering of a connected graph.
///
/// Each iteration draws a source uniformly from the uncovered set `R`, runs
/// Dijkstra, and keeps the shortest path from the source that contains the
/// most members of `R`. Among equally good paths the longer one wins, then
/// the one ending at the smaller index. Paths are kept whole, including
/// already covered samples.
pub fn sspc(graph: &NeighborGraph, seed: u64) -> Result<PathCover> {
    let n = graph.n_nodes();
    if n == 0 {
        return Err(Error::InvalidArgument("empty graph".into()));
    }
    let components = graph.components().len();
    if components != 1 {
        return Err(Error::Disconnected { components });
    }

    let mut rng = rng::seeded(seed);
    // uncovered set with O(1) removal; `slot[v]` is v's position in `pool`
    let mut pool: Vec<usize> = (0..n).collect();
    let mut slot: Vec<usize> = (0..n).collect();
    let mut uncovered = vec![true; n];
    let mut overlap = vec![0usize; n];
    let mut paths = Vec::new();
    let mut history = Vec::new();

    while !pool.is_empty() {
        let s = pool[rng::index(&mut rng, pool.len())];
        let tree = graph::shortest_paths_from(graph, s)?;

        let mut best = s;
        for &v in &tree.order {
            overlap[v] = tree.parent[v].map_or(0, |p| overlap[p]) + usize::from(uncovered[v]);
            let better = overlap[v]
                .cmp(&overlap[best])
                .then(tree.dist[v].total_cmp(&tree.dist[best]))
                .then(best.cmp(&v));
            if better.is_gt() {
                best = v;
            }
        }

        let path = GeodesicPath::from_tree(&tree, best)?;
        for &v in &path.nodes {
            if uncovered[v] {
                uncovered[v] = false;
                let i = slot[v];
                let last = *pool.last().unwrap();
                pool.swap_remove(i);
                if last != v {
                    slot[last] = i;
                }
            }
        }
        history.push(pool.len());
        paths.push(path);
    }

    Ok(PathCover::from_paths(n, paths, history, seed))
}

/// Power law `P = alpha * N^gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub gamma: f64,
    pub r_squared: f64,
}

/// Exponential decay `R(n) = N * exp(-lambda * n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub lambda: f64,
    pub r_squared: f64,
    /// Number of points inside the fit window.
    pub points: usize,
}

/// Both scaling laws for one dataset family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r^2)`.
pub(crate) fn least_squares(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::FitDegenerate("all abscissae are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if syy <= f64::EPSILON * n * my.abs().max(1.0) {
        1.0
    } else {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    Ok((intercept, slope, r2))
}

/// Least-squares fit of `log P` against `log N`.
pub fn fit_power_law(samples: &[(usize, usize)]) -> Result<PowerLawFit> {
    if samples.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 (N, P) samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|&(n, p)| n == 0 || p == 0) {
        return Err(Error::InvalidArgument("N and P must be positive".into()));
    }
    let x: Vec<f64> = samples.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let y: Vec<f64> = samples.iter().map(|&(_, p)| (p as f64).ln()).collect();
    let (a, b, r2) = least_squares(&x, &y)?;
    Ok(PowerLawFit {
        alpha: a.exp(),
        gamma: b,
        r_squared: r2,
    })
}

/// Fit `log R(n)` against `n` over the window `R(n) >= max(100, 0.05 N)`.
///
/// `series[0]` is `R(0) = N` and `series[n]` the uncovered count after
/// iteration `n` (see [`PathCover::decay_series`]).
pub fn fit_decay(series: &[usize]) -> Result<DecayFit> {
    let n_total = *series
        .first()
        .ok_or_else(|| Error::FitDegenerate("empty history".into()))?;
    let floor = (0.05 * n_total as f64).max(100.0);
    let (x, y): (Vec<f64>, Vec<f64>) = series
        .iter()
        .enumerate()
        .filter(|&(_, &r)| r as f64 >= floor)
        .map(|(i, &r)| (i as f64, (r as f64).ln()))
        .unzip();
    if x.len() < 3 {
        return Err(Error::FitDegenerate(format!(
            "only {} history points with R(n) >= {floor}",
            x.len()
        )));
    }
    let (_, slope, r2) = least_squares(&x, &y)?;
    Ok(DecayFit {
        lambda: -slope,
        r_squared: r2,
        points: x.len(),
    })
}

/// Reference decay rates per intrinsic dimension, `(K, lambda)`.
pub const REFERENCE_DECAY: [(usize, f64); 3] = [(1, 0.123), (2, 0.010), (3, 0.005)];

/// Log-space distances closer than this count as a tie.
const DECAY_TIE_TOLERANCE: f64 = 1e-2;

/// Intrinsic dimension whose reference decay rate is nearest in log space.
/// Ties (within 1% in ratio) go to the smaller dimension.
pub fn estimate_dimensionality(lambda: f64) -> Result<usize> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let l = lambda.ln();
    let mut best = REFERENCE_DECAY[0];
    for &cand in &REFERENCE_DECAY[1..] {
        if (l - cand.1.ln()).abs() < (l - best.1.ln()).abs() - DECAY_TIE_TOLERANCE {
            best = cand;
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{path_graph, random_graph};
    use crate::graph::{build_knn_graph, shortest_paths_from};

    fn check_cover(g: &NeighborGraph, c: &PathCover) {
        let n = g.n_nodes();
        assert!(c.uncovered().is_empty());
        // history strictly decreasing to 0, one entry per covering path
        assert_eq!(c.history.len(), c.n_paths());
        assert_eq!(*c.history.last().unwrap(), 0);
        assert!(c.decay_series().windows(2).all(|w| w[0] > w[1]));
        // incidence is the inverse of membership
        let total: usize = c.node_incidence.iter().map(Vec::len).sum();
        assert_eq!(total, c.paths.iter().map(GeodesicPath::len).sum::<usize>());
        for (v, inc) in c.node_incidence.iter().enumerate() {
            for i in inc {
                let path = &c.paths[i.path];
                let pos = path.nodes.iter().position(|&x| x == v).unwrap();
                assert_eq!(path.arc[pos], i.offset);
            }
        }
        for path in &c.paths {
            assert_eq!(path.arc[0], 0.0);
            for (e, a) in path.nodes.windows(2).zip(path.arc.windows(2)) {
                let w = g.weight(e[0], e[1]).expect("consecutive nodes adjacent");
                assert!((a[1] - a[0] - w).abs() <= 1e-9 * a[1].max(1.0));
            }
            let t = shortest_paths_from(g, path.nodes[0]).unwrap();
            let d = t.dist[*path.nodes.last().unwrap()];
            assert!((path.length() - d).abs() <= 1e-9 * d.max(1.0));
        }
        assert!(c.n_paths() <= n);
    }

    #[test]
    fn path_graph_needs_at_most_two_paths() {
        // one path when the first source is an end, two when it is interior
        let g = path_graph(5);
        for seed in 0..10 {
            let c = sspc(&g, seed).unwrap();
            check_cover(&g, &c);
            let first = c.paths[0].nodes[0];
            if first == 0 || first == 4 {
                assert_eq!(c.n_paths(), 1);
                assert_eq!(c.paths[0].len(), 5);
            } else {
                assert_eq!(c.n_paths(), 2);
            }
        }
    }

    #[test]
    fn covers_random_graphs() {
        for seed in 0..20 {
            let g = random_graph(10, seed);
            if !g.is_connected() {
                assert!(matches!(sspc(&g, seed), Err(Error::Disconnected { .. })));
                continue;
            }
            check_cover(&g, &sspc(&g, seed).unwrap());
        }
    }

    #[test]
    fn swiss_roll_cover_is_deterministic_and_compact() {
        let cloud = crate::dataset::generate_swiss_roll(1000, 0.0, 1).unwrap();
        let g = build_knn_graph(&cloud, 8).unwrap();
        let a = sspc(&g, 5).unwrap();
        let b = sspc(&g, 5).unwrap();
        assert_eq!(a, b);
        check_cover(&g, &a);
        assert!(a.n_paths() < 500);
        assert!(a.degenerate_paths().is_empty());
    }

    #[test]
    fn cover_json_round_trip() {
        let g = random_graph(9, 3);
        let g = g.subgraph(&g.largest_component());
        let c = sspc(&g, 11).unwrap();
        let text = serde_json::to_string(&c.to_json()).unwrap();
        let back: CoverJson = serde_json::from_str(&text).unwrap();
        assert_eq!(PathCover::from_json(g.n_nodes(), &back).unwrap(), c);
    }

    #[test]
    fn power_law_exact() {
        let samples: Vec<_> = [100usize, 400, 1600, 6400]
            .iter()
            .map(|&n| (n, (2.0 * (n as f64).sqrt()).round() as usize))
            .collect();
        let f = fit_power_law(&samples).unwrap();
        assert!((f.alpha - 2.0).abs() < 1e-9);
        assert!((f.gamma - 0.5).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);

        let flat = fit_power_law(&[(100, 7), (200, 7), (400, 7)]).unwrap();
        assert!(flat.gamma.abs() < 1e-12);
        assert!(fit_power_law(&[(1, 1), (2, 2)]).is_err());
        assert!(matches!(
            fit_power_law(&[(5, 1), (5, 2), (5, 3)]),
            Err(Error::FitDegenerate(_))
        ));
    }

    #[test]
    fn decay_exact() {
        // R(n) = 1000 e^{-0.01 n}; rounding to integers perturbs log R by < 1e-2 / R
        let series: Vec<usize> = (0..400)
            .map(|n| (1000.0 * (-0.01 * n as f64).exp()).round() as usize)
            .collect();
        let f = fit_decay(&series).unwrap();
        assert!((f.lambda - 0.01).abs() < 1e-5, "{f:?}");
        assert!(f.r_squared > 0.9999);
        assert!(matches!(
            fit_decay(&[50, 40, 30]),
            Err(Error::FitDegenerate(_))
        ));
    }

    #[test]
    fn dimensionality_lookup() {
        assert_eq!(estimate_dimensionality(0.123).unwrap(), 1);
        assert_eq!(estimate_dimensionality(0.010).unwrap(), 2);
        assert_eq!(estimate_dimensionality(0.005).unwrap(), 3);
        let mid = (0.123f64 * 0.010).sqrt();
        assert_eq!(estimate_dimensionality(mid).unwrap(), 1);
        assert_eq!(estimate_dimensionality(0.035).unwrap(), 1);
        assert_eq!(estimate_dimensionality(1e-4).unwrap(), 3);
        assert!(estimate_dimensionality(0.0).is_err());
    }
}
