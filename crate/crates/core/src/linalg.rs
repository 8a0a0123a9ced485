//! Dense linear algebra shared by the mapper, the rigidity checks and the baseline.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::rng;

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
///
/// Each eigenvector is flipped so that its largest-magnitude entry is positive
/// (first such entry on ties), which makes results reproducible.
pub(crate) fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        fix_sign(&mut col);
        vectors.set_column(c, &col);
    }
    (values, vectors)
}

/// Flip `v` so its largest-magnitude entry is positive.
pub(crate) fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix. Eigenvalues with
/// magnitude below `rel_tol` times the largest magnitude are treated as zero.
pub(crate) fn pinv_sym(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    let max = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let n = m.nrows();
    let mut scaled = vectors.clone();
    for c in 0..n {
        let lam = values[c];
        let inv = if max > 0.0 && lam.abs() > rel_tol * max {
            1.0 / lam
        } else {
            0.0
        };
        scaled.column_mut(c).scale_mut(inv);
    }
    scaled * vectors.transpose()
}

/// Largest `k` eigenpairs of a symmetric matrix, eigenvalues descending.
///
/// Lanczos with full reorthogonalization, grown until every wanted Ritz pair
/// has a residual below `1e-10` of the spectral scale. Suitable for large
/// dense matrices where only a handful of pairs is needed.
pub(crate) fn top_eigen(
    m: &DMatrix<f64>,
    k: usize,
    seed: u64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot take {k} eigenpairs of a {n}x{n} matrix"
        )));
    }
    if n <= 400 {
        let (values, vectors) = sym_eigen(m);
        let idx: Vec<usize> = (0..k).map(|i| n - 1 - i).collect();
        let vals = DVector::from_iterator(k, idx.iter().map(|&i| values[i]));
        return Ok((vals, vectors.select_columns(&idx)));
    }
    let mut r = rng::seeded(seed);
    let mut q = DVector::from_fn(n, |_, _| rng::unit(&mut r) - 0.5);
    q.normalize_mut();
    let mut basis: Vec<DVector<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut check_at = (2 * k + 20).min(n);
    loop {
        let j = basis.len() - 1;
        let mut w = m * &basis[j];
        alpha.push(basis[j].dot(&w));
        // two passes of classical Gram-Schmidt keep the basis orthogonal
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let b = w.norm();
        let size = basis.len();
        if size >= check_at
            || size == n
            || b <= 1e-14 * alpha.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300)
        {
            let t = DMatrix::from_fn(size, size, |i, jj| {
                if i == jj {
                    alpha[i]
                } else if i + 1 == jj {
                    beta[i]
                } else if jj + 1 == i {
                    beta[jj]
                } else {
                    0.0
                }
            });
            let (vals, vecs) = sym_eigen(&t);
            let scale = vals.amax().max(1e-300);
            let wanted: Vec<usize> = (0..k.min(size)).map(|i| size - 1 - i).collect();
            let converged = wanted
                .iter()
                .all(|&i| (b * vecs[(size - 1, i)]).abs() <= 1e-10 * scale);
            if (converged && size >= k) || size == n || b <= 1e-14 * scale {
                if size < k {
                    return Err(Error::RankDeficient(format!(
                        "Krylov space exhausted after {size} vectors"
                    )));
                }
                let basis_m = DMatrix::from_columns(&basis);
                let vals_out = DVector::from_iterator(k, wanted.iter().map(|&i| vals[i]));
                let mut out = &basis_m * vecs.select_columns(&wanted);
                for c in 0..k {
                    let mut col = out.column(c).into_owned();
                    col.normalize_mut();
                    fix_sign(&mut col);
                    out.set_column(c, &col);
                }
                return Ok((vals_out, out));
            }
            check_at = (size + size / 2).min(n);
        }
        beta.push(b);
        basis.push(w / b);
    }
}

/// Column means of `m`.
pub(crate) fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Subtract the column means in place.
pub(crate) fn center_columns(m: &mut DMatrix<f64>) {
    let means = column_means(m);
    for (c, mean) in means.iter().enumerate() {
        m.column_mut(c).add_scalar_mut(-mean);
    }
}

/// Orthogonal matrix `R` (reflections allowed) minimising `||a R - b||_F`
/// for centred `a` and `b`, plus the singular values of `a^T b`.
pub(crate) fn orthogonal_procrustes(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let m = a.transpose() * b;
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    (u * v_t, svd.singular_values)
}

/// Solve a square system with full pivoting; `None` when singular.
pub(crate) fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().full_piv_lu().solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_sym(n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::seeded(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng::unit(&mut r) - 0.5);
        &a * a.transpose()
    }

    #[test]
    fn eigen_is_sorted_and_reconstructs() {
        let m = random_sym(7, 1);
        let (vals, vecs) = sym_eigen(&m);
        for i in 1..7 {
            assert!(vals[i - 1] <= vals[i]);
        }
        let back = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((back - m).amax() < 1e-10);
    }

    #[test]
    fn eigen_sign_rule() {
        let (_, vecs) = sym_eigen(&random_sym(6, 2));
        for c in vecs.column_iter() {
            let big = c
                .iter()
                .fold(0.0f64, |a, &v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn pinv_of_laplacian() {
        // path-graph Laplacian, null space = constants
        let l = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        let p = pinv_sym(&l, 1e-12);
        assert!((&l * &p * &l - &l).amax() < 1e-12);
        assert!((&p * &l * &p - &p).amax() < 1e-12);
        assert!((&p * DVector::from_element(3, 1.0)).amax() < 1e-12);
    }

    #[test]
    fn lanczos_matches_dense() {
        let mut m = random_sym(450, 3);
        m -= DMatrix::identity(450, 450) * 40.0;
        // a spectrum with large negative eigenvalues must not confuse it
        m[(0, 0)] -= 500.0;
        let (vals, vecs) = top_eigen(&m, 3, 0).unwrap();
        let (all, _) = sym_eigen(&m);
        for i in 0..3 {
            assert!((vals[i] - all[449 - i]).abs() < 1e-8 * all[449].abs());
            let v = vecs.column(i);
            assert!((&m * v - v * vals[i]).amax() < 1e-6);
        }
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.5, 0.0, -0.5]);
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let b = &a * &rot;
        let (r, _) = orthogonal_procrustes(&a, &b);
        assert!((r - rot).amax() < 1e-12);
    }
}
