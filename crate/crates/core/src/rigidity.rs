//! Does a network of lines pin down a unique shape?
//!
//! Paths that share samples constrain each other. A network is rigid when all
//! of its realizations as straight lines differ only by a rotation and a
//! translation. Rigidity is established constructively: a hyper-pyramid
//! (`K+1` corners pairwise joined by `K(K+1)/2` lines) is rigid on its own,
//! and any line crossing a rigid sub-network at two distinct samples can be
//! merged into it. [`ensure_rigidity`] adds compensation paths until a single
//! rigid component holds every line, or a budget runs out.

use std::collections::{BTreeSet, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cover::{GeodesicPath, Incidence, PathCover};
use crate::error::{Error, Result};
use crate::graph::{self, NeighborGraph};
use crate::linalg;
use crate::rng;

/// Maximum number of compensation paths [`ensure_rigidity`] may add.
pub const COMPENSATION_BUDGET: usize = 50;

/// Candidate extensions examined per line-adjacency component before the
/// hyper-pyramid search gives up.
const SEARCH_BUDGET: usize = 200_000;

/// A sample that lies on two or more paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedSample {
    pub node: usize,
    /// One entry per path through the sample; `lines.len()` is its multiplicity.
    pub lines: Vec<Incidence>,
}

impl SharedSample {
    pub fn multiplicity(&self) -> usize {
        self.lines.len()
    }
}

/// All shared samples of a path network.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionSet {
    pub n_paths: usize,
    /// Number of samples on each path.
    pub path_len: Vec<usize>,
    pub entries: Vec<SharedSample>,
}

impl IntersectionSet {
    /// Build from explicit entries. Paths must be indexed below `path_len.len()`,
    /// every entry needs at least two distinct paths.
    pub fn new(path_len: Vec<usize>, entries: Vec<SharedSample>) -> Result<Self> {
        let n_paths = path_len.len();
        for e in &entries {
            if e.lines.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "sample {} is on fewer than two paths",
                    e.node
                )));
            }
            let mut seen = HashSet::new();
            for inc in &e.lines {
                if inc.path >= n_paths {
                    return Err(Error::InvalidArgument(format!(
                        "path index {} out of range",
                        inc.path
                    )));
                }
                if !seen.insert(inc.path) {
                    return Err(Error::InvalidArgument(format!(
                        "path {} listed twice at sample {}",
                        inc.path, e.node
                    )));
                }
                if !inc.offset.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "non-finite offset at sample {}",
                        e.node
                    )));
                }
            }
        }
        Ok(IntersectionSet {
            n_paths,
            path_len,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `sum_q m_q`.
    pub fn total_multiplicity(&self) -> usize {
        self.entries.iter().map(|e| e.lines.len()).sum()
    }

    /// For every path, the indices of the entries it passes through.
    pub fn entries_by_path(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_paths];
        for (q, e) in self.entries.iter().enumerate() {
            for inc in &e.lines {
                out[inc.path].push(q);
            }
        }
        out
    }
}

/// Collect every sample that lies on at least two paths.
pub fn find_intersections(cover: &PathCover) -> IntersectionSet {
    let entries = cover
        .node_incidence
        .iter()
        .enumerate()
        .filter(|(_, inc)| inc.len() >= 2)
        .map(|(node, inc)| SharedSample {
            node,
            lines: inc.clone(),
        })
        .collect();
    IntersectionSet {
        n_paths: cover.n_paths(),
        path_len: cover.paths.iter().map(GeodesicPath::len).collect(),
        entries,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedKind {
    HyperPyramid,
    /// In one dimension a single line is already rigid.
    SingleLine,
}

/// A set of lines known to be rigid with respect to each other.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidComponent {
    pub line_indices: BTreeSet<usize>,
    pub seed_kind: SeedKind,
}

impl RigidComponent {
    pub fn len(&self) -> usize {
        self.line_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.line_indices.is_empty()
    }

    pub fn contains(&self, line: usize) -> bool {
        self.line_indices.contains(&line)
    }
}

/// Connected components of the "shares a sample" relation between lines,
/// restricted to lines with at least one shared sample.
fn line_components(inter: &IntersectionSet) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..inter.n_paths).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut touched = vec![false; inter.n_paths];
    for e in &inter.entries {
        let first = e.lines[0].path;
        for inc in &e.lines {
            touched[inc.path] = true;
            let (a, b) = (find(&mut parent, first), find(&mut parent, inc.path));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; inter.n_paths];
    for p in 0..inter.n_paths {
        if !touched[p] {
            continue;
        }
        let r = find(&mut parent, p);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(p);
    }
    groups
}

/// Search state for one hyper-pyramid.
struct PyramidSearch<'a> {
    k: usize,
    inter: &'a IntersectionSet,
    by_path: &'a [Vec<usize>],
    /// Entry indices of the corners found so far.
    corners: Vec<usize>,
    /// Lines used so far, one per corner pair.
    used: Vec<usize>,
    budget: usize,
}

impl PyramidSearch<'_> {
    fn line_has_entry(&self, line: usize, q: usize) -> bool {
        self.by_path[line].binary_search(&q).is_ok()
    }

    fn lines_at(&self, q: usize) -> impl Iterator<Item = usize> + '_ {
        self.inter.entries[q].lines.iter().map(|inc| inc.path)
    }

    /// Try to place the next corner; true once all `K+1` corners are placed.
    fn extend(&mut self) -> bool {
        if self.corners.len() == self.k + 1 {
            return true;
        }
        let c0 = self.corners[0];
        let via: Vec<usize> = self
            .lines_at(c0)
            .filter(|l| !self.used.contains(l))
            .collect();
        for l0 in via {
            // l0 must not already carry another corner
            if self.corners[1..]
                .iter()
                .any(|&c| self.line_has_entry(l0, c))
            {
                continue;
            }
            for idx in 0..self.by_path[l0].len() {
                let c = self.by_path[l0][idx];
                if self.budget == 0 {
                    return false;
                }
                self.budget -= 1;
                if self.corners.contains(&c) || self.inter.entries[c].multiplicity() < self.k {
                    continue;
                }
                // a used line through the candidate would make corners collinear
                if self.used.iter().any(|&l| self.line_has_entry(l, c)) {
                    continue;
                }
                self.used.push(l0);
                self.corners.push(c);
                if self.connect(1) {
                    return true;
                }
                self.corners.pop();
                self.used.pop();
            }
        }
        false
    }

    /// Join the newest corner to corner `i` and beyond, then recurse.
    fn connect(&mut self, i: usize) -> bool {
        let new = *self.corners.last().unwrap();
        if i == self.corners.len() - 1 {
            return self.extend();
        }
        let ci = self.corners[i];
        let options: Vec<usize> = self
            .lines_at(ci)
            .filter(|&l| !self.used.contains(&l) && self.line_has_entry(l, new))
            .collect();
        for l in options {
            let others = self
                .corners
                .iter()
                .any(|&c| c != ci && c != new && self.line_has_entry(l, c));
            if others {
                continue;
            }
            self.used.push(l);
            if self.connect(i + 1) {
                return true;
            }
            self.used.pop();
        }
        false
    }
}

/// Rigid seeds: every line when `k == 1`, otherwise at most one hyper-pyramid
/// per connected group of intersecting lines.
///
/// A hyper-pyramid has `k+1` distinct corner samples and one distinct line per
/// corner pair passing through exactly those two corners, so that the `k`
/// lines at each corner are concurrent there and the corners span a simplex.
pub fn find_hyper_pyramids(inter: &IntersectionSet, k: usize) -> Vec<RigidComponent> {
    if k == 0 {
        return Vec::new();
    }
    if k == 1 {
        return (0..inter.n_paths)
            .filter(|&p| inter.path_len[p] > 0)
            .map(|p| RigidComponent {
                line_indices: BTreeSet::from([p]),
                seed_kind: SeedKind::SingleLine,
            })
            .collect();
    }
    let by_path = inter.entries_by_path();
    let mut seeds = Vec::new();
    for group in line_components(inter) {
        if group.len() < k * (k + 1) / 2 {
            continue;
        }
        // corners on busy samples first
        let mut starts: Vec<usize> = group
            .iter()
            .flat_map(|&p| by_path[p].iter().copied())
            .filter(|&q| inter.entries[q].multiplicity() >= k)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        starts.sort_by_key(|&q| (std::cmp::Reverse(inter.entries[q].multiplicity()), q));
        let mut search = PyramidSearch {
            k,
            inter,
            by_path: &by_path,
            corners: Vec::new(),
            used: Vec::new(),
            budget: SEARCH_BUDGET,
        };
        for q in starts {
            search.corners = vec![q];
            search.used.clear();
            if search.extend() {
                seeds.push(RigidComponent {
                    line_indices: search.used.iter().copied().collect(),
                    seed_kind: SeedKind::HyperPyramid,
                });
                break;
            }
            if search.budget == 0 {
                break;
            }
        }
    }
    seeds
}

/// Absorb, until nothing changes, every line that meets the component at two
/// distinct samples (or at all of its samples, for paths shorter than two).
pub fn grow_rigid(component: &RigidComponent, inter: &IntersectionSet) -> RigidComponent {
    let by_path = inter.entries_by_path();
    let mut inside = vec![false; inter.n_paths];
    let mut marked = vec![false; inter.entries.len()];
    let mut hits = vec![0usize; inter.n_paths];
    let mut queue: Vec<usize> = component.line_indices.iter().copied().collect();
    for &p in &queue {
        inside[p] = true;
    }
    while let Some(p) = queue.pop() {
        for &q in &by_path[p] {
            if marked[q] {
                continue;
            }
            marked[q] = true;
            for inc in &inter.entries[q].lines {
                let l = inc.path;
                if inside[l] {
                    continue;
                }
                hits[l] += 1;
                if hits[l] >= inter.path_len[l].min(2) {
                    inside[l] = true;
                    queue.push(l);
                }
            }
        }
    }
    RigidComponent {
        line_indices: (0..inter.n_paths).filter(|&p| inside[p]).collect(),
        seed_kind: component.seed_kind,
    }
}

/// Grown rigid components, disjoint, largest first.
pub fn rigid_components(inter: &IntersectionSet, k: usize) -> (Vec<RigidComponent>, usize) {
    let seeds = find_hyper_pyramids(inter, k);
    let n_seeds = seeds.len();
    let mut owner = vec![false; inter.n_paths];
    let mut comps: Vec<RigidComponent> = Vec::new();
    for seed in seeds {
        if seed.line_indices.iter().any(|&p| owner[p]) {
            continue;
        }
        let grown = grow_rigid(&seed, inter);
        // growth may run into lines another component already owns; those
        // components are rigid together with this one, so merge
        if grown.line_indices.iter().any(|&p| owner[p]) {
            let mut merged = grown;
            comps.retain(|c| {
                if c.line_indices
                    .iter()
                    .any(|p| merged.line_indices.contains(p))
                {
                    merged.line_indices.extend(c.line_indices.iter().copied());
                    false
                } else {
                    true
                }
            });
            let merged = grow_rigid(&merged, inter);
            for &p in &merged.line_indices {
                owner[p] = true;
            }
            comps.push(merged);
        } else {
            for &p in &grown.line_indices {
                owner[p] = true;
            }
            comps.push(grown);
        }
    }
    comps.sort_by_key(|c| (std::cmp::Reverse(c.len()), c.line_indices.first().copied()));
    (comps, n_seeds)
}

/// Outcome of a rigidity check, written as JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidityReport {
    pub schema_version: u32,
    pub rigid: bool,
    pub components: Vec<Vec<usize>>,
    pub pyramids_found: usize,
    pub paths_added: usize,
}

/// Check a cover without modifying it.
pub fn assess(cover: &PathCover, k: usize) -> RigidityReport {
    let inter = find_intersections(cover);
    let (comps, n_seeds) = rigid_components(&inter, k);
    report(&comps, n_seeds, cover.n_paths(), 0)
}

fn report(comps: &[RigidComponent], seeds: usize, n_paths: usize, added: usize) -> RigidityReport {
    RigidityReport {
        schema_version: crate::SCHEMA_VERSION,
        rigid: n_paths > 0 && comps.first().is_some_and(|c| c.len() == n_paths),
        components: comps
            .iter()
            .map(|c| c.line_indices.iter().copied().collect())
            .collect(),
        pyramids_found: seeds,
        paths_added: added,
    }
}

/// Add shortest paths until one rigid component holds every line, at most
/// [`COMPENSATION_BUDGET`] of them.
///
/// Each addition runs from the highest-degree sample on the largest rigid
/// component to the geodesically farthest sample on a line outside it. When
/// no rigid seed exists at all, the source is the highest-degree sample of
/// the graph. Degree ties are broken by the seeded RNG.
pub fn ensure_rigidity(
    cover: &PathCover,
    graph: &NeighborGraph,
    k: usize,
    seed: u64,
) -> Result<(PathCover, RigidityReport)> {
    if cover.n_nodes() != graph.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "cover has {} samples, graph has {}",
            cover.n_nodes(),
            graph.n_nodes()
        )));
    }
    if !graph.is_connected() {
        return Err(Error::Disconnected {
            components: graph.components().len(),
        });
    }
    let mut cover = cover.clone();
    let mut r = rng::seeded(seed ^ 0x5249_4749_4944); // decorrelate from the covering stream
    let mut tried: HashSet<(usize, usize)> = HashSet::new();
    let mut added = 0;
    loop {
        let inter = find_intersections(&cover);
        let (comps, n_seeds) = rigid_components(&inter, k);
        let rep = report(&comps, n_seeds, cover.n_paths(), added);
        if rep.rigid || added >= COMPENSATION_BUDGET {
            return Ok((cover, rep));
        }
        let n = graph.n_nodes();
        let mut on_comp = vec![false; n];
        if let Some(c) = comps.first() {
            for &p in &c.line_indices {
                for &v in &cover.paths[p].nodes {
                    on_comp[v] = true;
                }
            }
        }
        let pool: Vec<usize> = if comps.is_empty() {
            (0..n).collect()
        } else {
            (0..n).filter(|&v| on_comp[v]).collect()
        };
        let source = max_degree(graph, &pool, &mut r);
        let tree = graph::shortest_paths_from(graph, source)?;
        let outside: Vec<usize> = match comps.first() {
            None => (0..n).collect(),
            Some(c) => {
                let mut v: Vec<usize> = (0..cover.n_paths())
                    .filter(|p| !c.contains(*p))
                    .flat_map(|p| cover.paths[p].nodes.iter().copied())
                    .filter(|&v| !on_comp[v])
                    .collect();
                if v.is_empty() {
                    v = (0..cover.n_paths())
                        .filter(|p| !c.contains(*p))
                        .flat_map(|p| cover.paths[p].nodes.iter().copied())
                        .collect();
                }
                v
            }
        };
        let target = outside
            .iter()
            .copied()
            .filter(|&t| t != source && !tried.contains(&(source, t)))
            .max_by(|&a, &b| tree.dist[a].total_cmp(&tree.dist[b]).then(b.cmp(&a)));
        let Some(target) = target else {
            return Ok((cover, rep));
        };
        tried.insert((source, target));
        log::debug!("compensation path {source} -> {target}");
        cover.push_path(GeodesicPath::from_tree(&tree, target)?);
        added += 1;
    }
}

fn max_degree(graph: &NeighborGraph, pool: &[usize], r: &mut rng::Rng) -> usize {
    let best = pool.iter().map(|&v| graph.degree(v)).max().unwrap_or(0);
    let tied: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&v| graph.degree(v) == best)
        .collect();
    tied[rng::index(r, tied.len())]
}

/// Index of the unknown `r_i . r_j` (`i <= j`, zero-based) in the Gram system:
/// the `K+1` squared norms first, then the pairs in lexicographic order.
pub fn gram_unknown(k: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    if i == j {
        return i;
    }
    let c = k + 1;
    // pairs (a, b) with a < i come first
    c + i * c - i * (i + 1) / 2 + (j - i - 1)
}

/// Coefficient matrix of the linear system that recovers the inner products
/// of hyper-pyramid corners from their pairwise distances.
///
/// Rows are `X_ii + X_jj - 2 X_ij = D_ij^2` for every corner pair in
/// lexicographic order, then `sum_j X_ij = 0` for every corner (the corners
/// are centred). For `K = 2` this is
///
/// ```text
/// 1 1 0 -2  0  0
/// 1 0 1  0 -2  0
/// 0 1 1  0  0 -2
/// 1 0 0  1  1  0
/// 0 1 0  1  0  1
/// 0 0 1  0  1  1
/// ```
pub fn pyramid_gram_system(k: usize) -> DMatrix<f64> {
    let c = k + 1;
    let size = c * (c + 1) / 2;
    let mut a = DMatrix::zeros(size, size);
    let mut row = 0;
    for i in 0..c {
        for j in i + 1..c {
            a[(row, gram_unknown(k, i, i))] += 1.0;
            a[(row, gram_unknown(k, j, j))] += 1.0;
            a[(row, gram_unknown(k, i, j))] -= 2.0;
            row += 1;
        }
    }
    for i in 0..c {
        for j in 0..c {
            a[(row, gram_unknown(k, i, j))] += 1.0;
        }
        row += 1;
    }
    a
}

/// Corners of a hyper-pyramid in `R^k`, centred on the origin, from the
/// squared distances of its `k(k+1)/2` corner pairs (lexicographic order).
/// Unique up to an orthogonal transform.
pub fn recover_corners(k: usize, sq_dist: &[f64]) -> Result<DMatrix<f64>> {
    let c = k + 1;
    if sq_dist.len() != c * k / 2 {
        return Err(Error::DimensionMismatch(format!(
            "{} squared distances for a {k}-dimensional hyper-pyramid, expected {}",
            sq_dist.len(),
            c * k / 2
        )));
    }
    let a = pyramid_gram_system(k);
    let mut rhs = DVector::zeros(a.nrows());
    for (i, &d) in sq_dist.iter().enumerate() {
        rhs[i] = d;
    }
    let x = linalg::solve(&a, &rhs)
        .ok_or_else(|| Error::RankDeficient("Gram system is singular".into()))?;
    let gram = DMatrix::from_fn(c, c, |i, j| x[gram_unknown(k, i, j)]);
    let (vals, vecs) = linalg::sym_eigen(&gram);
    let scale = vals.amax().max(f64::MIN_POSITIVE);
    let mut out = DMatrix::zeros(c, k);
    for d in 0..k {
        let lam = vals[c - 1 - d];
        if lam < -1e-9 * scale {
            return Err(Error::RankDeficient(format!(
                "distances are not realizable in {k} dimensions (eigenvalue {lam:e})"
            )));
        }
        out.set_column(d, &(vecs.column(c - 1 - d) * lam.max(0.0).sqrt()));
    }
    Ok(out)
}

/// Start and unit direction of the line through two of its samples located at
/// arc offsets `l1 != l2`.
pub fn line_through_samples(
    r1: &DVector<f64>,
    l1: f64,
    r2: &DVector<f64>,
    l2: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if r1.len() != r2.len() {
        return Err(Error::DimensionMismatch(
            "samples of different dimension".into(),
        ));
    }
    let span = l2 - l1;
    if span == 0.0 || !span.is_finite() {
        return Err(Error::InvalidArgument(
            "the two samples must sit at distinct offsets".into(),
        ));
    }
    let xi = (r1 * l2 - r2 * l1) / span;
    let v = (r2 - r1) / span;
    Ok((xi, v))
}
