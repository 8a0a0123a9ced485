//! Classical Isomap and PCA.
//!
//! Isomap needs every pairwise geodesic and an eigen-decomposition of an
//! `N x N` matrix, which is exactly the cost the path-based method avoids.
//! It is kept here as the reference for quality and runtime comparisons.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::graph::{self, NeighborGraph};
use crate::linalg;
use crate::mapper::Embedding;

/// Largest graph [`all_pairs_geodesics`] accepts; the matrix is dense.
pub const MAX_DENSE_SAMPLES: usize = 20_000;

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub d: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        if !d.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "distance matrix is {}x{}",
                d.nrows(),
                d.ncols()
            )));
        }
        let n = d.nrows();
        for i in 0..n {
            if d[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (d[(i, j)], d[(j, i)]);
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "bad distance at ({i}, {j})"
                    )));
                }
                if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
                    return Err(Error::InvalidArgument(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { d })
    }

    /// Euclidean distances between the rows of `x`.
    pub fn euclidean(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let d = DMatrix::from_fn(n, n, |i, j| (x.row(i) - x.row(j)).norm());
        DistanceMatrix { d }
    }

    pub fn len(&self) -> usize {
        self.d.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.d.nrows() == 0
    }
}

/// Geodesic distance between every pair of nodes, one Dijkstra per source.
pub fn all_pairs_geodesics(graph: &NeighborGraph) -> Result<DistanceMatrix> {
    let n = graph.n_nodes();
    if n > MAX_DENSE_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "{n} samples exceed the dense all-pairs limit of {MAX_DENSE_SAMPLES}"
        )));
    }
    if !graph.is_connected() {
        return Err(Error::Disconnected {
            components: graph.components().len(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| graph::shortest_paths_from(graph, s).map(|t| t.dist))
        .collect::<Result<_>>()?;
    let mut d = DMatrix::zeros(n, n);
    for (s, row) in rows.into_iter().enumerate() {
        d.column_mut(s).copy_from_slice(&row);
    }
    // floating point sums along reversed paths can differ in the last bits
    for j in 0..n {
        for i in j + 1..n {
            let avg = 0.5 * (d[(i, j)] + d[(j, i)]);
            d[(i, j)] = avg;
            d[(j, i)] = avg;
        }
    }
    Ok(DistanceMatrix { d })
}

/// Top-`k` eigenvectors of the double-centred squared distances, scaled by
/// the square roots of their eigenvalues.
pub fn classical_mds(d: &DistanceMatrix, k: usize) -> Result<Embedding> {
    let n = d.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "MDS needs 1 <= K < N, got K={k}, N={n}"
        )));
    }
    let mut b = d.d.map(|x| -0.5 * x * x);
    // b is symmetric, so its row means are its column means
    let means = linalg::column_means(&b);
    let total = means.mean();
    for j in 0..n {
        for i in 0..n {
            b[(i, j)] += total - means[i] - means[j];
        }
    }
    let (vals, vecs) = linalg::top_eigen(&b, k, 0)?;
    let scale = vals[0].abs().max(f64::MIN_POSITIVE);
    let mut coords = DMatrix::zeros(n, k);
    for c in 0..k {
        if vals[c] <= 1e-12 * scale {
            return Err(Error::RankDeficient(format!(
                "only {c} positive eigenvalues, {k} requested"
            )));
        }
        coords.set_column(c, &(vecs.column(c) * vals[c].sqrt()));
    }
    Ok(Embedding::from_coords(coords))
}

/// kNN graph, geodesics and classical MDS on the largest connected component.
pub fn isomap(cloud: &PointCloud, k: usize, dim: usize) -> Result<Embedding> {
    let full = graph::build_knn_graph(cloud, k)?;
    let keep = full.largest_component();
    let g = if keep.len() == full.n_nodes() {
        full
    } else {
        full.subgraph(&keep)
    };
    let d = all_pairs_geodesics(&g)?;
    let mut emb = classical_mds(&d, dim)?;
    emb.samples = keep;
    Ok(emb)
}

/// Projection of the centred cloud onto its top `dims` principal directions.
pub fn pca(cloud: &PointCloud, dims: usize) -> Result<PointCloud> {
    let (n, m) = cloud.points.shape();
    if dims == 0 || dims > n.min(m) {
        return Err(Error::InvalidArgument(format!(
            "PCA dimension must be in 1..={}, got {dims}",
            n.min(m)
        )));
    }
    let mut x = cloud.points.clone();
    linalg::center_columns(&mut x);
    let cov = x.transpose() * &x;
    let (_, vecs) = linalg::sym_eigen(&cov);
    let idx: Vec<usize> = (0..dims).map(|i| m - 1 - i).collect();
    let proj = &x * vecs.select_columns(&idx);
    let mut out = PointCloud::new(proj, format!("{}-pca{dims}", cloud.name))?;
    out.intrinsic = cloud.intrinsic.clone();
    out.labels = cloud.labels.clone();
    Ok(out)
}
