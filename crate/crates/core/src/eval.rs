//! Embedding quality metrics and runtime scaling benchmarks.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baseline::{self, DistanceMatrix};
use crate::cover::least_squares;
use crate::dataset::Generator;
use crate::error::{Error, Result};
use crate::graph::{self, NeighborGraph};
use crate::linalg;
use crate::mapper::{self, EmbedOptions};
use crate::rng;

/// Root-mean-square distance between `b` and the best similarity transform
/// (rotation or reflection, translation, uniform scale) of `a`.
pub fn procrustes_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty point sets".into()));
    }
    let aligned = procrustes_align(a, b)?;
    Ok(((aligned - b).norm_squared() / n as f64).sqrt())
}

/// [`procrustes_error`] divided by the RMS spread of `b` about its centroid,
/// so that 0 is a perfect match and 1 is no better than collapsing to a point.
pub fn relative_procrustes_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let err = procrustes_error(a, b)?;
    let mut bc = b.clone();
    linalg::center_columns(&mut bc);
    let spread = (bc.norm_squared() / b.nrows() as f64).sqrt();
    if spread == 0.0 {
        return Err(Error::InvalidArgument("reference points coincide".into()));
    }
    Ok(err / spread)
}

/// `a` mapped onto `b` by the best similarity transform.
pub fn procrustes_align(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mb = linalg::column_means(b);
    let (mut ac, mut bc) = (a.clone(), b.clone());
    linalg::center_columns(&mut ac);
    linalg::center_columns(&mut bc);
    let (rot, sv) = linalg::orthogonal_procrustes(&ac, &bc);
    let na = ac.norm_squared();
    let s = if na > 0.0 { sv.sum() / na } else { 0.0 };
    let mut out = ac * rot * s;
    for (c, m) in mb.iter().enumerate() {
        out.column_mut(c).add_scalar_mut(*m);
    }
    Ok(out)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the series is constant".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// `1 - r^2` between all pairwise geodesic distances and the corresponding
/// Euclidean distances of the embedding.
pub fn residual_variance(d: &DistanceMatrix, coords: &DMatrix<f64>) -> Result<f64> {
    let n = d.len();
    if coords.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} distances rows, {} embedded rows",
            coords.nrows()
        )));
    }
    let mut x = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    let mut y = Vec::with_capacity(x.capacity());
    for i in 0..n {
        for j in i + 1..n {
            x.push(d.d[(i, j)]);
            y.push((coords.row(i) - coords.row(j)).norm());
        }
    }
    let r = pearson(&x, &y)?;
    Ok(1.0 - r * r)
}

/// [`residual_variance`] over the distances from `sources` randomly chosen
/// nodes to every node, for graphs too large for an all-pairs matrix.
pub fn residual_variance_sampled(
    graph: &NeighborGraph,
    coords: &DMatrix<f64>,
    sources: usize,
    seed: u64,
) -> Result<f64> {
    let n = graph.n_nodes();
    if coords.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} graph nodes, {} embedded rows",
            coords.nrows()
        )));
    }
    let mut r = rng::seeded(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..sources.min(n) {
        let s = rng::index(&mut r, n);
        let tree = graph::shortest_paths_from(graph, s)?;
        for t in 0..n {
            if t != s && tree.dist[t].is_finite() {
                x.push(tree.dist[t]);
                y.push((coords.row(s) - coords.row(t)).norm());
            }
        }
    }
    let rho = pearson(&x, &y)?;
    Ok(1.0 - rho * rho)
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} values",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two values".into()));
    }
    pearson(&ranks(x), &ranks(y))
}

/// Which pipeline a benchmark times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Embed,
    Isomap,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "embed" => Ok(Method::Embed),
            "isomap" => Ok(Method::Isomap),
            other => Err(Error::InvalidArgument(format!(
                "unknown method {other:?}; expected one of: embed, isomap"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Embed => "embed",
            Method::Isomap => "isomap",
        }
    }
}

/// Median wall time per size and the log-log slope fitted through them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub method: String,
    pub dataset: String,
    pub sizes: Vec<usize>,
    pub wall_ms: Vec<f64>,
    /// Sizes that failed, with the error message; excluded from the fit.
    pub failures: Vec<(usize, String)>,
    pub loglog_slope: f64,
    pub environment: String,
}

/// Parameters of [`runtime_benchmark`].
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub dataset: Generator,
    pub sizes: Vec<usize>,
    pub noise: f64,
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    pub repeats: usize,
}

pub fn environment() -> String {
    format!(
        "{}-{}, {} worker threads",
        std::env::consts::OS,
        std::env::consts::ARCH,
        rayon::current_num_threads()
    )
}

/// Sizes that ran, their median wall times in ms, failed sizes with their
/// errors, and the log-log slope.
pub type SizeTimings = (Vec<usize>, Vec<f64>, Vec<(usize, String)>, f64);

/// Time `run(n)` for every size: one discarded warm-up call on the first
/// size, then the median of `repeats` calls per size. Sizes whose run fails
/// are reported and left out of the slope.
pub fn time_sizes<F>(sizes: &[usize], repeats: usize, mut run: F) -> Result<SizeTimings>
where
    F: FnMut(usize) -> Result<()>,
{
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    if sizes.len() < 3 {
        return Err(Error::InvalidArgument(
            "a scaling benchmark needs at least 3 sizes".into(),
        ));
    }
    let _ = run(sizes[0]);
    let mut ok_sizes = Vec::new();
    let mut wall = Vec::new();
    let mut failures = Vec::new();
    'sizes: for &n in sizes {
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            if let Err(e) = run(n) {
                failures.push((n, e.to_string()));
                continue 'sizes;
            }
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(f64::total_cmp);
        ok_sizes.push(n);
        wall.push(times[times.len() / 2]);
    }
    let lx: Vec<f64> = ok_sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = wall.iter().map(|&t| t.max(1e-6).ln()).collect();
    if lx.len() < 2 {
        return Err(Error::FitDegenerate(format!(
            "only {} sizes succeeded",
            lx.len()
        )));
    }
    let (_, slope, _) = least_squares(&lx, &ly)?;
    Ok((ok_sizes, wall, failures, slope))
}

/// Wall-clock scaling of one method on one synthetic dataset. Data generation
/// is outside the timed region.
pub fn runtime_benchmark(method: Method, cfg: &BenchConfig) -> Result<BenchReport> {
    let clouds = cfg
        .sizes
        .iter()
        .map(|&n| cfg.dataset.generate(n, cfg.noise, cfg.seed).map(|c| (n, c)))
        .collect::<Result<Vec<_>>>()?;
    let lookup = |n: usize| {
        &clouds
            .iter()
            .find(|(m, _)| *m == n)
            .expect("generated above")
            .1
    };
    let opts = EmbedOptions::new(cfg.k, cfg.dim, cfg.seed);
    let (sizes, wall_ms, failures, slope) = time_sizes(&cfg.sizes, cfg.repeats, |n| {
        let cloud = lookup(n);
        match method {
            Method::Embed => mapper::embed(cloud, &opts).map(|_| ()),
            Method::Isomap => baseline::isomap(cloud, cfg.k, cfg.dim).map(|_| ()),
        }
    })?;
    Ok(BenchReport {
        schema_version: crate::SCHEMA_VERSION,
        method: method.name().into(),
        dataset: cfg.dataset.name().into(),
        sizes,
        wall_ms,
        failures,
        loglog_slope: slope,
        environment: environment(),
    })
}
