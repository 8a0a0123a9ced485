//! Mapping paths to straight lines.
//!
//! Every path `p` becomes a line `xi_p + l * v_p` in `R^K` with `|v_p| = 1`,
//! where `l` is the geodesic offset along the path. A sample shared by several
//! paths gets one estimate per line, and the objective `J` is half the summed
//! variance of those estimates. `J` is quadratic, so with `xi` eliminated the
//! optimal directions are eigenvectors of `psi = B' - A' A^+ B` and the starts
//! follow as `xi = -A^+ B v`.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cover::{self, PathCover};
use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::graph::{self, KnnOptions, NeighborGraph};
use crate::linalg;
use crate::rigidity::{self, IntersectionSet, RigidityReport, SharedSample};

/// Eigenvalues of `psi` up to this fraction of the largest count as zero.
pub const ZERO_EIGEN_TOL: f64 = 1e-9;
/// Relative singular value cutoff of the pseudo-inverse of `A`.
pub const PINV_TOL: f64 = 1e-12;

/// `start + distance * direction`, for a unit `direction`.
pub fn map_point_on_line(start: &[f64], direction: &[f64], distance: f64) -> Result<Vec<f64>> {
    if start.len() != direction.len() {
        return Err(Error::DimensionMismatch(format!(
            "start has {} coordinates, direction {}",
            start.len(),
            direction.len()
        )));
    }
    let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "direction has norm {norm}, expected 1"
        )));
    }
    Ok(start
        .iter()
        .zip(direction)
        .map(|(s, d)| s + distance * d)
        .collect())
}

/// Starts and unit directions of all lines, one row per path.
#[derive(Debug, Clone, PartialEq)]
pub struct LineParams {
    pub xi: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LineParams {
    pub fn n_lines(&self) -> usize {
        self.xi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.xi.ncols()
    }
}

/// The matrices of the stationarity conditions `A xi + B v = 0` and
/// `A' xi + B' v = Lambda v`, with `A' = B^T`.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub a_prime: DMatrix<f64>,
    pub b_prime: DMatrix<f64>,
    pub a_pinv: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

/// Assemble `A`, `B`, `A'`, `B'` and `psi` for `p` lines.
///
/// Each shared sample `q` with multiplicity `m` and lines `eta_i` at offsets
/// `l_i` contributes `1/m` (resp. `l_i/m`, `l_i^2/m`) on the diagonal and
/// `-1/m^2` (resp. `-l_j/m^2`, `-l_i l_j/m^2`) to every pair of its lines.
pub fn assemble_matrices(inter: &IntersectionSet, p: usize) -> Result<SystemMatrices> {
    if inter.is_empty() {
        return Err(Error::NoIntersections);
    }
    let mut a = DMatrix::zeros(p, p);
    let mut b = DMatrix::zeros(p, p);
    let mut bp = DMatrix::zeros(p, p);
    for e in &inter.entries {
        let m = e.multiplicity() as f64;
        let m2 = m * m;
        for li in &e.lines {
            let r = li.path;
            if r >= p {
                return Err(Error::InvalidArgument(format!(
                    "path index {r} with only {p} lines"
                )));
            }
            a[(r, r)] += 1.0 / m;
            b[(r, r)] += li.offset / m;
            bp[(r, r)] += li.offset * li.offset / m;
            for lj in &e.lines {
                let s = lj.path;
                a[(r, s)] -= 1.0 / m2;
                b[(r, s)] -= lj.offset / m2;
                bp[(r, s)] -= li.offset * lj.offset / m2;
            }
        }
    }
    let a_prime = b.transpose();
    let a_pinv = connected_laplacian_pinv(&a).unwrap_or_else(|| linalg::pinv_sym(&a, PINV_TOL));
    let psi = &bp - &a_prime * (&a_pinv * &b);
    let psi = (&psi + psi.transpose()) * 0.5;
    Ok(SystemMatrices {
        a,
        b,
        a_prime,
        b_prime: bp,
        a_pinv,
        psi,
    })
}

/// `A^+ = (A + J/P)^-1 - J/P` for the Laplacian of a connected line network,
/// where `J` is all ones; `None` when the network is split or the shifted
/// matrix is not positive definite. Much cheaper than an eigen-decomposition.
fn connected_laplacian_pinv(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = a.nrows();
    let mut seen = vec![false; p];
    let mut stack = vec![0];
    seen[0] = true;
    let mut reached = 1;
    while let Some(r) = stack.pop() {
        for s in 0..p {
            if !seen[s] && a[(r, s)] != 0.0 {
                seen[s] = true;
                reached += 1;
                stack.push(s);
            }
        }
    }
    if reached < p {
        return None;
    }
    let shift = 1.0 / p as f64;
    let shifted = a.add_scalar(shift);
    let inv = shifted.cholesky()?.inverse();
    let out = inv.add_scalar(-shift);
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Half the summed variance of the per-line estimates of every shared sample.
pub fn objective(params: &LineParams, inter: &IntersectionSet) -> f64 {
    let mut j = 0.0;
    for e in &inter.entries {
        let m = e.multiplicity() as f64;
        for k in 0..params.dim() {
            let est: Vec<f64> = e
                .lines
                .iter()
                .map(|inc| params.xi[(inc.path, k)] + inc.offset * params.v[(inc.path, k)])
                .collect();
            let mean = est.iter().sum::<f64>() / m;
            j += 0.5 * est.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
        }
    }
    j
}

/// `(dJ/dxi, dJ/dv)`, without the Lagrange term.
pub fn gradients(params: &LineParams, inter: &IntersectionSet) -> (DMatrix<f64>, DMatrix<f64>) {
    let (p, k) = params.xi.shape();
    let mut gx = DMatrix::zeros(p, k);
    let mut gv = DMatrix::zeros(p, k);
    for e in &inter.entries {
        let m = e.multiplicity() as f64;
        for d in 0..k {
            let mean = e
                .lines
                .iter()
                .map(|inc| params.xi[(inc.path, d)] + inc.offset * params.v[(inc.path, d)])
                .sum::<f64>()
                / m;
            for inc in &e.lines {
                let dev = params.xi[(inc.path, d)] + inc.offset * params.v[(inc.path, d)] - mean;
                gx[(inc.path, d)] += dev / m;
                gv[(inc.path, d)] += inc.offset * dev / m;
            }
        }
    }
    (gx, gv)
}

/// How [`solve_lines_with`] turns eigenvectors into unit directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveOptions {
    /// Before normalizing rows, apply the `K x K` linear map that brings the
    /// row norms closest to one in least squares. The eigenvectors only fix
    /// the span of the direction columns; this picks the member of that span
    /// that best satisfies the unit-norm constraints.
    pub metric_upgrade: bool,
    /// Upper bound on refinement sweeps after the closed-form start; zero
    /// keeps the closed form. Each sweep is a projected power step on the
    /// unit-row problem and never increases the objective.
    pub refine_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            metric_upgrade: true,
            refine_iters: 3000,
        }
    }
}

/// Relative objective change below which refinement stops.
const REFINE_TOL: f64 = 1e-8;

/// Line parameters from the eigenvectors of `psi`; see [`solve_lines_with`].
pub fn solve_lines(system: &SystemMatrices, k: usize) -> Result<LineParams> {
    solve_lines_with(system, k, SolveOptions::default()).map(|(params, _)| params)
}

/// Directions from the `k` smallest eigenvalues of `psi` after the `k0`
/// zero ones, rows normalized, starts from `xi = -A^+ B v`. Returns `k0`.
///
/// Eigenvalues below [`ZERO_EIGEN_TOL`] of the largest count as zero. More
/// than `k` of them means the network flexes in ways the data cannot fix, and
/// they are all skipped; `k` or fewer zeros are an exactly realizable network
/// whose null space is the solution itself, so nothing is skipped.
pub fn solve_lines_with(
    system: &SystemMatrices,
    k: usize,
    opts: SolveOptions,
) -> Result<(LineParams, usize)> {
    let p = system.psi.nrows();
    if k == 0 {
        return Err(Error::InvalidArgument(
            "target dimension must be at least 1".into(),
        ));
    }
    if p <= k {
        return Err(Error::RankDeficient(format!(
            "{p} lines cannot span {k} dimensions"
        )));
    }
    let (vals, vecs) = linalg::sym_eigen(&system.psi);
    let top = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let zeros = vals.iter().filter(|&&v| v <= ZERO_EIGEN_TOL * top).count();
    let k0 = if zeros > k { zeros } else { 0 };
    if p < k0 + k {
        return Err(Error::RankDeficient(format!(
            "psi has {} positive eigenvalues, {k} needed",
            p - k0
        )));
    }
    let mut v = vecs.columns(k0, k).into_owned();
    if opts.metric_upgrade {
        if let Some(m) = unit_row_metric(&v) {
            v = &v * m;
        }
    }
    let scale = v.row_iter().map(|r| r.norm()).fold(0.0f64, f64::max);
    for r in 0..p {
        let n = v.row(r).norm();
        if n <= 1e-12 * scale || !n.is_finite() {
            return Err(Error::ZeroDirection { path: r });
        }
        v.row_mut(r).unscale_mut(n);
    }
    if opts.refine_iters > 0 {
        let sweeps =
            refine_directions(&system.psi, &mut v, vals[p - 1].max(0.0), opts.refine_iters);
        log::debug!("direction refinement ran {sweeps} sweeps");
    }
    let xi = -(&system.a_pinv * (&system.b * &v));
    Ok((LineParams { xi, v }, k0))
}

/// Minimise `tr(v^T psi v)` over unit rows by iterating
/// `v <- rownorm((sigma I - psi) v)`. With `sigma` at least the top
/// eigenvalue the shifted matrix is positive semidefinite, so each step
/// cannot increase the objective. Rows that would vanish keep their value.
///
/// The eigenvectors solve a relaxation with one norm constraint per column;
/// when some lines are only weakly tied to the rest, the smallest modes
/// concentrate on them and row normalization of those modes lands far from
/// the constrained optimum. Refinement recovers it from that start.
fn refine_directions(
    psi: &DMatrix<f64>,
    v: &mut DMatrix<f64>,
    sigma: f64,
    max_iters: usize,
) -> usize {
    let mut pv = psi * &*v;
    let mut last = v.dot(&pv);
    for it in 0..max_iters {
        let mut next = &*v * sigma - &pv;
        for r in 0..next.nrows() {
            let n = next.row(r).norm();
            if n > 1e-300 && n.is_finite() {
                next.row_mut(r).unscale_mut(n);
            } else {
                next.set_row(r, &v.row(r));
            }
        }
        let next_pv = psi * &next;
        let e = next.dot(&next_pv);
        if e > last {
            return it;
        }
        *v = next;
        pv = next_pv;
        let done = last - e <= REFINE_TOL * last.abs().max(1e-300);
        last = e;
        if done {
            return it + 1;
        }
    }
    max_iters
}

/// Symmetric positive definite `M` with `|u_p M|` as close to one as possible
/// over the rows `u_p` of `u`, or `None` if the fit is not positive definite.
fn unit_row_metric(u: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (p, k) = u.shape();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
    let design = DMatrix::from_fn(p, pairs.len(), |r, c| {
        let (i, j) = pairs[c];
        let w = if i == j { 1.0 } else { 2.0 };
        w * u[(r, i)] * u[(r, j)]
    });
    let ones = DVector::from_element(p, 1.0);
    let s = linalg::solve(
        &(design.transpose() * &design),
        &(design.transpose() * ones),
    )?;
    let mut g = DMatrix::zeros(k, k);
    for (c, &(i, j)) in pairs.iter().enumerate() {
        g[(i, j)] = s[c];
        g[(j, i)] = s[c];
    }
    let (vals, vecs) = linalg::sym_eigen(&g);
    if vals[0] <= 1e-12 * vals[k - 1].abs() {
        return None;
    }
    let root = DVector::from_iterator(k, vals.iter().map(|v| v.sqrt()));
    Some(&vecs * DMatrix::from_diagonal(&root) * vecs.transpose())
}

/// Low-dimensional coordinates, one row per sample of the embedded graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub coords: DMatrix<f64>,
    /// Per sample, the RMS spread of its per-line estimates (0 on one line).
    pub quality: Option<Vec<f64>>,
    /// Row `i` of `coords` is input sample `samples[i]`.
    pub samples: Vec<usize>,
}

impl Embedding {
    pub fn from_coords(coords: DMatrix<f64>) -> Self {
        let samples = (0..coords.nrows()).collect();
        Embedding {
            coords,
            quality: None,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }
}

/// Average each sample's estimates over the active lines through it; samples
/// with no active line are marked unknown.
fn average_estimates(
    params: &LineParams,
    cover: &PathCover,
    active: &[bool],
) -> (DMatrix<f64>, Vec<f64>, Vec<bool>) {
    let n = cover.n_nodes();
    let k = params.dim();
    let mut coords = DMatrix::zeros(n, k);
    let mut quality = vec![0.0; n];
    let mut known = vec![false; n];
    let mut est = DVector::zeros(k);
    for (v, incs) in cover.node_incidence.iter().enumerate() {
        let lines: Vec<_> = incs.iter().filter(|inc| active[inc.path]).collect();
        if lines.is_empty() {
            continue;
        }
        let mut mean = DVector::zeros(k);
        for inc in &lines {
            est.copy_from(
                &(params.xi.row(inc.path) + params.v.row(inc.path) * inc.offset).transpose(),
            );
            mean += &est;
        }
        mean /= lines.len() as f64;
        let mut spread = 0.0;
        for inc in &lines {
            est.copy_from(
                &(params.xi.row(inc.path) + params.v.row(inc.path) * inc.offset).transpose(),
            );
            spread += (&est - &mean).norm_squared();
        }
        quality[v] = (spread / lines.len() as f64).sqrt();
        coords.set_row(v, &mean.transpose());
        known[v] = true;
    }
    (coords, quality, known)
}

/// Each sample at the mean of its estimates over all lines through it.
pub fn reconstruct_embedding(params: &LineParams, cover: &PathCover) -> Result<Embedding> {
    if params.n_lines() != cover.n_paths() {
        return Err(Error::DimensionMismatch(format!(
            "{} line parameters for {} paths",
            params.n_lines(),
            cover.n_paths()
        )));
    }
    let (coords, quality, known) = average_estimates(params, cover, &vec![true; cover.n_paths()]);
    if let Some(v) = known.iter().position(|k| !k) {
        return Err(Error::Internal(format!("sample {v} lies on no path")));
    }
    Ok(Embedding {
        coords,
        quality: Some(quality),
        samples: (0..cover.n_nodes()).collect(),
    })
}

/// Lines that cross the rest of the network at two or more distinct samples,
/// after repeatedly discarding lines that do not. A discarded line has a free
/// direction (or start) that no shared sample constrains.
pub fn anchored_lines(inter: &IntersectionSet) -> Vec<bool> {
    let by_path = inter.entries_by_path();
    let mut alive = vec![true; inter.n_paths];
    let mut mult: Vec<usize> = inter
        .entries
        .iter()
        .map(SharedSample::multiplicity)
        .collect();
    let mut count: Vec<usize> = by_path.iter().map(Vec::len).collect();
    let mut queue: VecDeque<usize> = (0..inter.n_paths).filter(|&p| count[p] < 2).collect();
    while let Some(p) = queue.pop_front() {
        if !alive[p] {
            continue;
        }
        alive[p] = false;
        for &q in &by_path[p] {
            mult[q] -= 1;
            if mult[q] == 1 {
                // the sample is no longer shared; its last line loses a crossing
                for inc in &inter.entries[q].lines {
                    let l = inc.path;
                    if alive[l] {
                        count[l] -= 1;
                        if count[l] < 2 {
                            queue.push_back(l);
                        }
                    }
                }
            }
        }
    }
    alive
}

/// Intersection set restricted to the `keep` lines, renumbered densely.
fn restrict(inter: &IntersectionSet, keep: &[bool]) -> (IntersectionSet, Vec<usize>) {
    let old: Vec<usize> = (0..inter.n_paths).filter(|&p| keep[p]).collect();
    let mut new_of = vec![usize::MAX; inter.n_paths];
    for (i, &p) in old.iter().enumerate() {
        new_of[p] = i;
    }
    let entries = inter
        .entries
        .iter()
        .filter_map(|e| {
            let lines: Vec<_> = e
                .lines
                .iter()
                .filter(|inc| keep[inc.path])
                .map(|inc| cover::Incidence {
                    path: new_of[inc.path],
                    offset: inc.offset,
                })
                .collect();
            (lines.len() >= 2).then_some(SharedSample {
                node: e.node,
                lines,
            })
        })
        .collect();
    let path_len = old.iter().map(|&p| inter.path_len[p]).collect();
    (
        IntersectionSet {
            n_paths: old.len(),
            path_len,
            entries,
        },
        old,
    )
}

/// Fit a unit-direction line to samples with known positions at the given offsets.
fn fit_line(points: &[(f64, DVector<f64>)]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = points.len() as f64;
    let lm = points.iter().map(|(l, _)| l).sum::<f64>() / n;
    let mut ym = DVector::zeros(points[0].1.len());
    for (_, y) in points {
        ym += y;
    }
    ym /= n;
    let mut slope = DVector::zeros(ym.len());
    let mut var = 0.0;
    for (l, y) in points {
        slope += (y - &ym) * (l - lm);
        var += (l - lm) * (l - lm);
    }
    if var <= 0.0 {
        return None;
    }
    let norm = slope.norm();
    if norm == 0.0 {
        return None;
    }
    let v = slope / norm;
    let xi = &ym - &v * lm;
    Some((xi, v))
}

/// Parameters of the end-to-end pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOptions {
    /// Neighbours per sample in the kNN graph.
    pub k: usize,
    /// Target dimension `K`.
    pub dim: usize,
    pub seed: u64,
    /// Perturb duplicate samples instead of rejecting them.
    pub jitter: Option<u64>,
    /// Add compensation paths when the network is not rigid.
    pub compensate: bool,
    pub solve: SolveOptions,
}

impl EmbedOptions {
    pub fn new(k: usize, dim: usize, seed: u64) -> Self {
        EmbedOptions {
            k,
            dim,
            seed,
            jitter: None,
            compensate: true,
            solve: SolveOptions::default(),
        }
    }
}

/// The `(N, P)` pair a power-law fit needs from this run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaInputs {
    pub n: usize,
    pub p: usize,
}

/// Summary of one [`embed`] run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// Input samples.
    pub n: usize,
    /// Ambient dimension.
    pub m: usize,
    pub k: usize,
    #[serde(rename = "K")]
    pub dim: usize,
    /// Paths, including compensation paths.
    #[serde(rename = "P")]
    pub paths: usize,
    /// Shared samples.
    #[serde(rename = "Q")]
    pub shared: usize,
    pub rigid: bool,
    pub paths_added: usize,
    /// Covering rate; `None` when the history is too short to fit.
    pub lambda: Option<f64>,
    pub gamma_inputs: GammaInputs,
    pub stage_ms: BTreeMap<String, f64>,
    #[serde(rename = "objective_J")]
    pub objective_j: f64,
    /// Zero eigenvalues of `psi` skipped before the solution columns.
    pub k0: usize,
    /// Single-sample paths.
    pub degenerate_paths: usize,
    /// Lines left out of the eigen-solve because they cross the network fewer
    /// than twice; fitted afterwards from their placed samples when possible.
    pub unanchored_lines: usize,
    /// Samples placed by averaging their placed graph neighbours because no
    /// solved line runs through them.
    pub interpolated: usize,
    /// Input samples outside the largest connected component.
    pub dropped: Vec<usize>,
}

/// Everything [`embed`] produces, for callers that want the intermediates.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub embedding: Embedding,
    pub report: RunReport,
    pub rigidity: RigidityReport,
    pub cover: PathCover,
    pub graph: NeighborGraph,
}

/// Run the whole pipeline: graph, covering, rigidity, optimization, averaging.
pub fn embed(cloud: &PointCloud, opts: &EmbedOptions) -> Result<(Embedding, RunReport)> {
    run(cloud, opts).map(|p| (p.embedding, p.report))
}

/// [`embed`], keeping the graph, cover and rigidity report.
pub fn run(cloud: &PointCloud, opts: &EmbedOptions) -> Result<Pipeline> {
    if opts.dim == 0 {
        return Err(Error::InvalidArgument(
            "target dimension must be at least 1".into(),
        ));
    }
    let mut stage_ms = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, stage_ms: &mut BTreeMap<String, f64>| {
        stage_ms.insert(name.to_string(), clock.elapsed().as_secs_f64() * 1e3);
        clock = Instant::now();
    };

    let full = graph::build_knn_graph_with(
        cloud,
        opts.k,
        KnnOptions {
            jitter: opts.jitter,
        },
    )?;
    let keep = full.largest_component();
    let mut in_keep = vec![false; full.n_nodes()];
    for &v in &keep {
        in_keep[v] = true;
    }
    let dropped: Vec<usize> = (0..full.n_nodes()).filter(|&v| !in_keep[v]).collect();
    if !dropped.is_empty() {
        log::warn!(
            "kNN graph is disconnected; embedding the largest component ({} of {} samples)",
            keep.len(),
            full.n_nodes()
        );
    }
    let g = if dropped.is_empty() {
        full
    } else {
        full.subgraph(&keep)
    };
    lap("graph", &mut stage_ms);

    let cover0 = cover::sspc(&g, opts.seed)?;
    let lambda = cover::fit_decay(&cover0.decay_series())
        .ok()
        .map(|f| f.lambda);
    let gamma_inputs = GammaInputs {
        n: g.n_nodes(),
        p: cover0.n_paths(),
    };
    lap("sspc", &mut stage_ms);

    let (cover, rigidity) = if opts.compensate {
        rigidity::ensure_rigidity(&cover0, &g, opts.dim, opts.seed)?
    } else {
        let rep = rigidity::assess(&cover0, opts.dim);
        (cover0, rep)
    };
    if !rigidity.rigid {
        log::warn!("line network is not rigid; the embedding may not be unique");
    }
    lap("rigidity", &mut stage_ms);

    let inter = rigidity::find_intersections(&cover);
    if inter.is_empty() {
        return Err(Error::NoIntersections);
    }
    let anchored = anchored_lines(&inter);
    let (core, old_index) = restrict(&inter, &anchored);
    if core.is_empty() {
        return Err(Error::NoIntersections);
    }
    let system = assemble_matrices(&core, core.n_paths)?;
    lap("assemble", &mut stage_ms);

    let (core_params, k0) = solve_lines_with(&system, opts.dim, opts.solve)?;
    let objective_j = objective(&core_params, &core);
    lap("solve", &mut stage_ms);

    let p = cover.n_paths();
    let mut params = LineParams {
        xi: DMatrix::zeros(p, opts.dim),
        v: DMatrix::zeros(p, opts.dim),
    };
    let mut active = vec![false; p];
    for (i, &old) in old_index.iter().enumerate() {
        params.xi.set_row(old, &core_params.xi.row(i));
        params.v.set_row(old, &core_params.v.row(i));
        active[old] = true;
    }
    let (mut coords, mut quality, mut known) = average_estimates(&params, &cover, &active);
    // lines outside the solve: fit them to already placed samples, repeatedly
    loop {
        let mut progress = false;
        for line in 0..p {
            if active[line] {
                continue;
            }
            let path = &cover.paths[line];
            let pts: Vec<(f64, DVector<f64>)> = path
                .nodes
                .iter()
                .zip(&path.arc)
                .filter(|(v, _)| known[**v])
                .map(|(&v, &l)| (l, coords.row(v).transpose()))
                .collect();
            if pts.len() < 2 {
                continue;
            }
            if let Some((xi, v)) = fit_line(&pts) {
                params.xi.set_row(line, &xi.transpose());
                params.v.set_row(line, &v.transpose());
                active[line] = true;
                progress = true;
                for (&node, &l) in path.nodes.iter().zip(&path.arc) {
                    if !known[node] {
                        coords.set_row(node, &(&xi + &v * l).transpose());
                        known[node] = true;
                    }
                }
            }
        }
        if !progress {
            break;
        }
    }
    let unanchored = anchored.iter().filter(|a| !**a).count();
    if unanchored > 0 {
        // re-average now that the fitted lines contribute too
        let (c, q, kn) = average_estimates(&params, &cover, &active);
        for v in 0..cover.n_nodes() {
            if kn[v] {
                coords.set_row(v, &c.row(v));
                quality[v] = q[v];
                known[v] = true;
            }
        }
    }
    let interpolated = fill_from_neighbors(&g, &mut coords, &mut known);
    if known.iter().any(|k| !k) {
        return Err(Error::Internal("some samples could not be placed".into()));
    }
    linalg::center_columns(&mut coords);
    lap("reconstruct", &mut stage_ms);

    let report = RunReport {
        schema_version: crate::SCHEMA_VERSION,
        n: cloud.len(),
        m: cloud.dim(),
        k: opts.k,
        dim: opts.dim,
        paths: cover.n_paths(),
        shared: inter.len(),
        rigid: rigidity.rigid,
        paths_added: rigidity.paths_added,
        lambda,
        gamma_inputs,
        stage_ms,
        objective_j,
        k0,
        degenerate_paths: cover.degenerate_paths().len(),
        unanchored_lines: unanchored,
        interpolated,
        dropped,
    };
    let embedding = Embedding {
        coords,
        quality: Some(quality),
        samples: keep,
    };
    Ok(Pipeline {
        embedding,
        report,
        rigidity,
        cover,
        graph: g,
    })
}

/// Place unknown samples at the mean of their placed neighbours, breadth first.
fn fill_from_neighbors(g: &NeighborGraph, coords: &mut DMatrix<f64>, known: &mut [bool]) -> usize {
    let mut filled = 0;
    let mut frontier: VecDeque<usize> = (0..g.n_nodes())
        .filter(|&v| !known[v] && g.neighbors(v).iter().any(|&(u, _)| known[u]))
        .collect();
    while let Some(v) = frontier.pop_front() {
        if known[v] {
            continue;
        }
        let placed: Vec<usize> = g
            .neighbors(v)
            .iter()
            .map(|&(u, _)| u)
            .filter(|&u| known[u])
            .collect();
        if placed.is_empty() {
            continue;
        }
        let mut mean = coords.row(placed[0]).into_owned();
        for &u in &placed[1..] {
            mean += coords.row(u);
        }
        mean /= placed.len() as f64;
        coords.set_row(v, &mean);
        known[v] = true;
        filled += 1;
        for &(u, _) in g.neighbors(v) {
            if !known[u] {
                frontier.push_back(u);
            }
        }
    }
    filled
}
