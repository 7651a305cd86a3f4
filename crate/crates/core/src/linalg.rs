//! Small dense helpers shared by the iterative solvers.

use nalgebra::linalg::SymmetricTridiagonal;
use nalgebra::DMatrix;

/// Eigenpairs of a small symmetric matrix, ascending.
///
/// Householder reduction followed by implicit QL on the tridiagonal form.
/// Eigenvalues are the Rayleigh quotients of the returned vectors.
pub(crate) fn sym_eigen(mat: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = mat.nrows();
    let (q, diag, off) = SymmetricTridiagonal::new(mat.clone()).unpack();
    let (_, z) = tridiagonal_eigen(diag.as_slice(), off.as_slice());
    let z = DMatrix::from_row_slice(n, n, &z);
    let v = q * z;
    let rayleigh: Vec<f64> = (0..n)
        .map(|k| {
            let col = v.column(k);
            col.dot(&(mat * col))
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rayleigh[a].total_cmp(&rayleigh[b]));
    let values = order.iter().map(|&i| rayleigh[i]).collect();
    let sorted = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, sorted)
}

/// Eigen-decomposition of a symmetric tridiagonal matrix by implicit QL.
///
/// `diag` has length m, `off` length m - 1. Returns the eigenvalues
/// (unordered) and the eigenvectors as columns of a row-major m x m array.
pub(crate) fn tridiagonal_eigen(diag: &[f64], off: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<usize> = (0..diag.len()).collect();
    tridiagonal_eigen_rows(diag, off, &rows)
}

/// Like [`tridiagonal_eigen`] but only accumulates the listed rows of the
/// eigenvector matrix; row `r` of the output holds eigenvector row `rows[r]`.
pub(crate) fn tridiagonal_eigen_rows(
    diag: &[f64],
    off: &[f64],
    rows: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let m = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; m];
    e[..m.saturating_sub(1)].copy_from_slice(&off[..m.saturating_sub(1)]);
    let mut z = vec![0.0; rows.len() * m];
    for (r, &row) in rows.iter().enumerate() {
        z[r * m + row] = 1.0;
    }
    for l in 0..m {
        let mut iter = 0;
        loop {
            let mut mm = l;
            while mm + 1 < m {
                let dd = d[mm].abs() + d[mm + 1].abs();
                if e[mm].abs() <= f64::EPSILON * dd {
                    break;
                }
                mm += 1;
            }
            if mm == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[mm] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = mm;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[mm] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..rows.len() {
                    let zk1 = z[k * m + i + 1];
                    let zk = z[k * m + i];
                    z[k * m + i + 1] = s * zk + c * zk1;
                    z[k * m + i] = c * zk - s * zk1;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[mm] = 0.0;
        }
    }
    (d, z)
}
