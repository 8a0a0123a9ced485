//! One test per acceptance criterion. Each prints a single PASS/FAIL line to
//! stderr (uncaptured, so it shows in every run) and then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use plisomap::baseline;
use plisomap::cover::{self, GeodesicPath, Incidence, PathCover};
use plisomap::dataset::{Generator, PointCloud};
use plisomap::eval::{self, BenchConfig, Method};
use plisomap::graph;
use plisomap::mapper::{self, EmbedOptions, LineParams};
use plisomap::rigidity::{self, IntersectionSet, SharedSample};

fn verdict(id: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {id:>2} [{}] {title}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Intrinsic coordinates of the samples an embedding kept.
fn truth_for(cloud: &PointCloud, samples: &[usize]) -> DMatrix<f64> {
    let t = cloud
        .intrinsic
        .as_ref()
        .expect("generated clouds carry intrinsic coordinates");
    DMatrix::from_fn(samples.len(), t.ncols(), |i, j| t[(samples[i], j)])
}

/// SSPC on the largest component of the k=8 graph.
fn covering_run(gen: Generator, n: usize, seed: u64) -> Run {
    let cloud = gen.generate(n, 0.0, seed).unwrap();
    let full = graph::build_knn_graph(&cloud, 8).unwrap();
    let keep = full.largest_component();
    let g = if keep.len() == full.n_nodes() {
        full
    } else {
        full.subgraph(&keep)
    };
    let paths = cover::sspc(&g, seed).unwrap();
    let lambda = cover::fit_decay(&paths.decay_series())
        .ok()
        .map(|f| f.lambda);
    (n, seed, paths.n_paths(), lambda)
}

/// `(N, seed, P, lambda)` of one covering run.
type Run = (usize, u64, usize, Option<f64>);

const SWEEP_SIZES: [usize; 4] = [500, 1000, 2000, 4000];
const SWEEP_SEEDS: u64 = 5;

fn sweep(gen: Generator) -> &'static [Run] {
    static SWISS: OnceLock<Vec<Run>> = OnceLock::new();
    static S_SHAPE: OnceLock<Vec<Run>> = OnceLock::new();
    let cell = match gen {
        Generator::SShape => &S_SHAPE,
        _ => &SWISS,
    };
    cell.get_or_init(|| {
        SWEEP_SIZES
            .iter()
            .flat_map(|&n| (0..SWEEP_SEEDS).map(move |s| (n, s)))
            .map(|(n, s)| covering_run(gen, n, s))
            .collect()
    })
}

#[test]
fn criterion_01_swiss_roll_unfolding() {
    let cloud = Generator::SwissRoll.generate(10_000, 0.0, 0).unwrap();
    let start = Instant::now();
    let run = mapper::run(&cloud, &EmbedOptions::new(8, 2, 0)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let emb = &run.embedding;
    let rv = eval::residual_variance_sampled(&run.graph, &emb.coords, 200, 1).unwrap();
    let err =
        eval::relative_procrustes_error(&emb.coords, &truth_for(&cloud, &emb.samples)).unwrap();
    let p = run.report.paths;
    let pass = rv <= 0.10 && err <= 0.15 && secs <= 300.0 && within(p as f64, 423.0, 1692.0);
    verdict(
        1,
        "Swiss-Roll N=10000",
        pass,
        &format!("residual variance {rv:.4} (<= 0.10), Procrustes error {err:.4} (<= 0.15), {secs:.1} s (<= 300), P={p} in [423, 1692]"),
    );
}

#[test]
fn criterion_02_swiss_roll_path_count() {
    let ps: Vec<f64> = (0..10)
        .map(|s| covering_run(Generator::SwissRoll, 1000, s).2 as f64)
        .collect();
    let m = median(&ps);
    verdict(
        2,
        "Swiss-Roll N=1000 path count",
        within(m, 77.0, 308.0),
        &format!("median P over 10 seeds {m} in [77, 308], runs {ps:?}"),
    );
}

#[test]
fn criterion_03_scaling_law() {
    let fit = |gen| {
        let samples: Vec<(usize, usize)> = sweep(gen).iter().map(|&(n, _, p, _)| (n, p)).collect();
        cover::fit_power_law(&samples).unwrap()
    };
    let swiss = fit(Generator::SwissRoll);
    let s = fit(Generator::SShape);
    let swiss_ok = within(swiss.gamma, 0.54, 0.84) && swiss.r_squared >= 0.9;
    let s_ok = within(s.gamma, 0.05, 0.35) && s.r_squared >= 0.9;
    verdict(
        3,
        "power law P = alpha N^gamma",
        swiss_ok && s_ok,
        &format!(
            "Swiss-Roll gamma {:.3} in [0.54, 0.84] r2 {:.3} [{}]; S-shape gamma {:.3} in [0.05, 0.35] r2 {:.3} [{}]",
            swiss.gamma,
            swiss.r_squared,
            if swiss_ok { "ok" } else { "out" },
            s.gamma,
            s.r_squared,
            if s_ok { "ok" } else { "out" },
        ),
    );
}

#[test]
fn criterion_04_decay_law() {
    // evaluated at one size per family: lambda drifts with N
    let lambda_at = |gen, n| {
        let ls: Vec<f64> = sweep(gen)
            .iter()
            .filter(|r| r.0 == n)
            .filter_map(|r| r.3)
            .collect();
        assert!(!ls.is_empty(), "no decay fit at N={n}");
        median(&ls)
    };
    let l2 = lambda_at(Generator::SwissRoll, 4000);
    let l1 = lambda_at(Generator::SShape, 2000);
    let k2 = cover::estimate_dimensionality(l2).unwrap();
    let k1 = cover::estimate_dimensionality(l1).unwrap();
    let ok2 = within(l2, 0.005, 0.020) && k2 == 2;
    let ok1 = within(l1, 0.0615, 0.246) && k1 == 1;
    verdict(
        4,
        "decay law R(n) = N exp(-lambda n)",
        ok1 && ok2,
        &format!(
            "K=2 lambda {l2:.4} in [0.005, 0.020], estimated K={k2} [{}]; K=1 lambda {l1:.4} in [0.0615, 0.246], estimated K={k1} [{}]",
            if ok2 { "ok" } else { "out" },
            if ok1 { "ok" } else { "out" },
        ),
    );
}

#[test]
fn criterion_05_runtime_slope_ordering() {
    // sigma = 0.05 keeps the k=8 graph connected; the bare curve splits into pieces
    let cfg = BenchConfig {
        dataset: Generator::SShape,
        sizes: vec![500, 1000, 2000, 4000, 8000],
        noise: 0.05,
        k: 8,
        dim: 1,
        seed: 0,
        repeats: 3,
    };
    let embed = eval::runtime_benchmark(Method::Embed, &cfg).unwrap();
    let iso = eval::runtime_benchmark(Method::Isomap, &cfg).unwrap();
    let pass = embed.failures.is_empty()
        && iso.failures.is_empty()
        && embed.loglog_slope < iso.loglog_slope;
    verdict(
        5,
        "runtime slope ordering",
        pass,
        &format!(
            "embed slope {:.3} < isomap slope {:.3}; embed ms {:?}, isomap ms {:?}",
            embed.loglog_slope,
            iso.loglog_slope,
            embed.wall_ms.iter().map(|t| t.round()).collect::<Vec<_>>(),
            iso.wall_ms.iter().map(|t| t.round()).collect::<Vec<_>>(),
        ),
    );
}

/// 40 x 20 unit grid rolled around a half cylinder: no stretching, so
/// geodesics on the surface are the planar grid distances.
fn flat_strip() -> PointCloud {
    let (w, h) = (40, 20);
    let radius = (w - 1) as f64 / std::f64::consts::PI;
    let mut pts = DMatrix::zeros(w * h, 3);
    let mut flat = DMatrix::zeros(w * h, 2);
    for j in 0..h {
        for i in 0..w {
            let r = j * w + i;
            let (u, z) = (i as f64, j as f64);
            let phi = u / radius;
            pts[(r, 0)] = radius * phi.cos();
            pts[(r, 1)] = radius * phi.sin();
            pts[(r, 2)] = z;
            flat[(r, 0)] = u;
            flat[(r, 1)] = z;
        }
    }
    PointCloud::new(pts, "flat-strip")
        .unwrap()
        .with_intrinsic(flat)
        .unwrap()
}

#[test]
fn criterion_06_oracle_equivalence_on_a_flat_strip() {
    let cloud = flat_strip();
    let run = mapper::run(&cloud, &EmbedOptions::new(8, 2, 0)).unwrap();
    let iso = baseline::isomap(&cloud, 8, 2).unwrap();
    assert_eq!(run.embedding.samples, iso.samples);
    let d = baseline::all_pairs_geodesics(&run.graph).unwrap();
    let rv_embed = eval::residual_variance(&d, &run.embedding.coords).unwrap();
    let rv_iso = eval::residual_variance(&d, &iso.coords).unwrap();
    let aligned = eval::procrustes_align(&run.embedding.coords, &iso.coords).unwrap();
    let errs: Vec<f64> = (0..aligned.nrows())
        .map(|i| (aligned.row(i) - iso.coords.row(i)).norm())
        .collect();
    let diameter = (39.0f64 * 39.0 + 19.0 * 19.0).sqrt();
    let rel = median(&errs) / diameter;
    let pass = rel <= 0.05 && rv_embed <= 0.05 && rv_iso <= 0.05;
    verdict(
        6,
        "flat strip oracle N=800",
        pass,
        &format!("median per-point gap {:.2}% of diameter (<= 5%), residual variance embed {rv_embed:.4} isomap {rv_iso:.4} (<= 0.05)", 100.0 * rel),
    );
}

/// Random intersections over `p` lines of `k`-vectors, with random parameters.
fn random_instance(
    r: &mut ChaCha8Rng,
    p: usize,
    q: usize,
    k: usize,
) -> (IntersectionSet, LineParams) {
    let mut entries = Vec::new();
    for node in 0..q {
        let m = r.random_range(2..=p.min(4));
        let mut lines: Vec<usize> = (0..p).collect();
        for i in 0..m {
            let j = r.random_range(i..p);
            lines.swap(i, j);
        }
        entries.push(SharedSample {
            node,
            lines: lines[..m]
                .iter()
                .map(|&path| Incidence {
                    path,
                    offset: r.random_range(0.0..5.0),
                })
                .collect(),
        });
    }
    let inter = IntersectionSet::new(vec![10; p], entries).unwrap();
    let xi = DMatrix::from_fn(p, k, |_, _| r.random_range(-1.0..1.0));
    let v = DMatrix::from_fn(p, k, |_, _| r.random_range(-1.0..1.0));
    (inter, LineParams { xi, v })
}

/// The objective written straight from its definition.
fn oracle_objective(inter: &IntersectionSet, lp: &LineParams) -> f64 {
    let k = lp.xi.ncols();
    let mut j = 0.0;
    for e in &inter.entries {
        let m = e.lines.len() as f64;
        for c in 0..k {
            let pos: Vec<f64> = e
                .lines
                .iter()
                .map(|inc| lp.xi[(inc.path, c)] + inc.offset * lp.v[(inc.path, c)])
                .collect();
            let mean = pos.iter().sum::<f64>() / m;
            j += 0.5 * pos.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
        }
    }
    j
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

#[test]
fn criterion_07_optimizer_suite() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_grad, mut worst_obj, mut min_eig, mut worst_sym, mut worst_a1) =
        (0.0f64, 0.0f64, f64::INFINITY, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let p = r.random_range(2..=6);
        let q = r.random_range(1..=8);
        let k = r.random_range(1..=3);
        let (inter, lp) = random_instance(&mut r, p, q, k);
        let j = oracle_objective(&inter, &lp);
        worst_obj = worst_obj.max((mapper::objective(&lp, &inter) - j).abs() / j.max(1e-300));

        // (a) central differences of the independent objective
        let h = 1e-5;
        let mut fd_xi = DMatrix::zeros(p, k);
        let mut fd_v = DMatrix::zeros(p, k);
        for a in 0..p {
            for c in 0..k {
                for (fd, which) in [(&mut fd_xi, 0), (&mut fd_v, 1)] {
                    let mut plus = lp.clone();
                    let mut minus = lp.clone();
                    if which == 0 {
                        plus.xi[(a, c)] += h;
                        minus.xi[(a, c)] -= h;
                    } else {
                        plus.v[(a, c)] += h;
                        minus.v[(a, c)] -= h;
                    }
                    fd[(a, c)] = (oracle_objective(&inter, &plus)
                        - oracle_objective(&inter, &minus))
                        / (2.0 * h);
                }
            }
        }
        let (g_xi, g_v) = mapper::gradients(&lp, &inter);
        worst_grad = worst_grad
            .max(rel_diff(&g_xi, &fd_xi))
            .max(rel_diff(&g_v, &fd_v));

        // (b), (c)
        let s = mapper::assemble_matrices(&inter, p).unwrap();
        worst_sym = worst_sym.max((&s.psi - s.psi.transpose()).amax());
        let eig = SymmetricEigen::new((&s.psi + s.psi.transpose()) * 0.5);
        min_eig = min_eig.min(eig.eigenvalues.min());
        worst_a1 = worst_a1.max((&s.a * DVector::from_element(p, 1.0)).amax());
    }

    // (d) one sample shared by lines 0 and 1 at offsets l0, l1
    let (l0, l1) = (1.5, 4.0);
    let single = IntersectionSet::new(
        vec![5, 5],
        vec![SharedSample {
            node: 0,
            lines: vec![
                Incidence {
                    path: 0,
                    offset: l0,
                },
                Incidence {
                    path: 1,
                    offset: l1,
                },
            ],
        }],
    )
    .unwrap();
    let s = mapper::assemble_matrices(&single, 2).unwrap();
    let a_hand = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
    let b_hand = DMatrix::from_row_slice(2, 2, &[l0 / 4.0, -l1 / 4.0, -l0 / 4.0, l1 / 4.0]);
    let hand = (&s.a - a_hand).amax().max((&s.b - b_hand).amax());

    // (e) the K=2 Gram system as printed
    let eq26 = DMatrix::from_row_slice(
        6,
        6,
        &[
            1., 1., 0., -2., 0., 0., //
            1., 0., 1., 0., -2., 0., //
            0., 1., 1., 0., 0., -2., //
            1., 0., 0., 1., 1., 0., //
            0., 1., 0., 1., 0., 1., //
            0., 0., 1., 0., 1., 1.,
        ],
    );
    let gram = rigidity::pyramid_gram_system(2);
    let gram_ok = same_up_to_permutation(&gram, &eq26);

    let pass = worst_grad <= 1e-6
        && worst_obj <= 1e-12
        && worst_sym <= 1e-12
        && min_eig >= -1e-8
        && worst_a1 <= 1e-12
        && hand <= 1e-15
        && gram_ok;
    verdict(
        7,
        "optimizer suite",
        pass,
        &format!(
            "(a) gradient vs FD {worst_grad:.1e} (<= 1e-6), objective vs oracle {worst_obj:.1e}; (b) asymmetry {worst_sym:.1e}, min eig {min_eig:.1e} (>= -1e-8); (c) |A 1| {worst_a1:.1e} (<= 1e-12); (d) hand A, B gap {hand:.1e}; (e) Gram system matches: {gram_ok}"
        ),
    );
}

/// Equal after some simultaneous permutation of unknowns (columns) and
/// equations (rows).
fn same_up_to_permutation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    if a.shape() != b.shape() {
        return false;
    }
    let n = a.ncols();
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        let permuted = DMatrix::from_fn(a.nrows(), n, |i, j| a[(i, perm[j])]);
        let mut rows_a: Vec<Vec<i64>> = permuted
            .row_iter()
            .map(|r| r.iter().map(|&x| x.round() as i64).collect())
            .collect();
        let mut rows_b: Vec<Vec<i64>> = b
            .row_iter()
            .map(|r| r.iter().map(|&x| x.round() as i64).collect())
            .collect();
        rows_a.sort();
        rows_b.sort();
        if rows_a == rows_b {
            return true;
        }
        if !next_permutation(&mut perm) {
            return false;
        }
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn random_rotation(r: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(k, k, |_, _| r.random_range(-1.0..1.0));
    m.qr().q()
}

/// Smallest `|a R - b|` over orthogonal `R`, both sets centred.
fn orthogonal_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let center = |m: &DMatrix<f64>| {
        let mean = m.row_mean();
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mean[j])
    };
    let (a, b) = (center(a), center(b));
    let svd = (a.transpose() * &b).svd(true, true);
    let rot = svd.u.unwrap() * svd.v_t.unwrap();
    (a * rot - b).amax()
}

/// Three parallel rows of five nodes, optionally with three crossing lines
/// that tie the rows together.
fn crossing_rows(with_crossers: bool) -> PathCover {
    let at = |x: usize, y: usize| y * 5 + x;
    let pos = |v: usize| [(v % 5) as f64, (v / 5) as f64];
    let mut lines: Vec<Vec<usize>> = (0..3).map(|y| (0..5).map(|x| at(x, y)).collect()).collect();
    if with_crossers {
        lines.push(vec![at(0, 0), at(1, 1), at(2, 2)]);
        lines.push(vec![at(4, 0), at(3, 1), at(2, 2)]);
        lines.push(vec![at(1, 0), at(2, 1), at(3, 2)]);
    }
    let paths = lines
        .into_iter()
        .map(|nodes| {
            let p0 = pos(nodes[0]);
            let arc = nodes
                .iter()
                .map(|&v| {
                    let p = pos(v);
                    ((p[0] - p0[0]).powi(2) + (p[1] - p0[1]).powi(2)).sqrt()
                })
                .collect();
            GeodesicPath { nodes, arc }
        })
        .collect();
    PathCover::from_paths(15, paths, Vec::new(), 0)
}

#[test]
fn criterion_08_rigidity_suite() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let mut worst_corner = 0.0f64;
    for k in [2usize, 3] {
        for _ in 0..20 {
            let corners = DMatrix::from_fn(k + 1, k, |_, _| r.random_range(-3.0..3.0));
            let mut sq = Vec::new();
            for i in 0..=k {
                for j in i + 1..=k {
                    sq.push((corners.row(i) - corners.row(j)).norm_squared());
                }
            }
            let got = rigidity::recover_corners(k, &sq).unwrap();
            worst_corner = worst_corner.max(orthogonal_gap(&got, &corners));
        }
    }

    let mut worst_transform = 0.0f64;
    for k in [2usize, 3] {
        for _ in 0..20 {
            let xi = DVector::from_fn(k, |_, _| r.random_range(-2.0..2.0));
            let v = DVector::from_fn(k, |_, _| r.random_range(-1.0..1.0)).normalize();
            let (l1, l2) = (r.random_range(0.0..3.0), r.random_range(4.0..8.0));
            let u = random_rotation(&mut r, k);
            let t = DVector::from_fn(k, |_, _| r.random_range(-5.0..5.0));
            let moved = |x: &DVector<f64>| &u * x + &t;
            let (xi_t, v_t) = rigidity::line_through_samples(
                &moved(&(&xi + &v * l1)),
                l1,
                &moved(&(&xi + &v * l2)),
                l2,
            )
            .unwrap();
            worst_transform = worst_transform
                .max((xi_t - moved(&xi)).amax())
                .max((v_t - &u * &v).amax());
        }
    }

    let loose = rigidity::assess(&crossing_rows(false), 2).rigid;
    let tied = rigidity::assess(&crossing_rows(true), 2).rigid;
    let pass = worst_corner <= 1e-8 && worst_transform <= 1e-10 && !loose && tied;
    verdict(
        8,
        "rigidity suite",
        pass,
        &format!(
            "corner recovery gap {worst_corner:.1e} (<= 1e-8), transform law gap {worst_transform:.1e} (<= 1e-10), parallel rows rigid={loose} (want false), with crossers rigid={tied} (want true)"
        ),
    );
}

/// Spearman correlation between intrinsic column 0 and the embedding after
/// aligning it onto the intrinsic coordinates.
fn aligned_rank_correlation(cloud: &PointCloud, emb: &mapper::Embedding) -> f64 {
    let truth = truth_for(cloud, &emb.samples);
    let aligned = eval::procrustes_align(&emb.coords, &truth).unwrap();
    let a: Vec<f64> = truth.column(0).iter().copied().collect();
    let b: Vec<f64> = aligned.column(0).iter().copied().collect();
    eval::spearman(&a, &b).unwrap()
}

#[test]
fn criterion_09_swiss_hole() {
    let cloud = Generator::SwissHole.generate(2000, 0.0, 0).unwrap();
    let (emb, _) = mapper::embed(&cloud, &EmbedOptions::new(8, 2, 0)).unwrap();
    let rho = aligned_rank_correlation(&cloud, &emb);
    verdict(
        9,
        "Swiss-Hole N=2000 ordering",
        rho >= 0.9,
        &format!("Spearman(t, aligned axis) {rho:.4} (>= 0.9)"),
    );
}

#[test]
fn criterion_10_noisy_s_shape() {
    let sigma = 0.05;
    let cloud = Generator::SShape.generate(2000, sigma, 0).unwrap();
    let (emb, _) = mapper::embed(&cloud, &EmbedOptions::new(8, 1, 0)).unwrap();
    let truth = truth_for(&cloud, &emb.samples);
    let a: Vec<f64> = truth.column(0).iter().copied().collect();
    let b: Vec<f64> = emb.coords.column(0).iter().copied().collect();
    // a 1-D embedding is only defined up to sign
    let rho = eval::spearman(&a, &b).unwrap().abs();
    verdict(
        10,
        "noisy S-shape N=2000",
        rho >= 0.95,
        &format!("|Spearman(arc length, y)| {rho:.4} (>= 0.95) at sigma {sigma}"),
    );
}
