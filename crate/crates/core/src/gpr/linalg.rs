//! Dense lower-triangular factorization and solves on column-major storage.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Smallest jitter factor tried, relative to the mean diagonal.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter factor tried before giving up.
pub const JITTER_MAX: f64 = 1e-6;

/// In-place lower Cholesky factor of a symmetric matrix. Only the lower
/// triangle is read; the strict upper triangle is zeroed. Returns `false`
/// if a pivot is not strictly positive.
fn cholesky_in_place(a: &mut DMatrix<f64>) -> bool {
    let n = a.nrows();
    let data = a.as_mut_slice();
    for j in 0..n {
        // Left-looking: column j -= sum_k<j L[j,k] * column k.
        let (done, rest) = data.split_at_mut(j * n);
        let col = &mut rest[..n];
        for k in 0..j {
            let prev = &done[k * n..(k + 1) * n];
            let ljk = prev[j];
            if ljk == 0.0 {
                continue;
            }
            for (d, s) in col[j..].iter_mut().zip(&prev[j..]) {
                *d -= ljk * s;
            }
        }
        let pivot = col[j];
        if !(pivot > 0.0 && pivot.is_finite()) {
            return false;
        }
        let root = pivot.sqrt();
        col[j] = root;
        for v in &mut col[j + 1..] {
            *v /= root;
        }
        col[..j].fill(0.0);
    }
    true
}

/// Factors `a`, adding diagonal jitter on failure: first none, then
/// `1e-10 * mean(diag)`, growing tenfold up to `1e-6 * mean(diag)`.
/// Returns the factor and the absolute jitter that was added.
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    let mut l = a.clone();
    if cholesky_in_place(&mut l) {
        return Ok((l, 0.0));
    }
    let mean_diag = if n == 0 { 0.0 } else { a.diagonal().sum() / n as f64 };
    let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut factor = JITTER_START;
    while factor <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = factor * base;
        l.copy_from(a);
        for i in 0..n {
            l[(i, i)] += jitter;
        }
        if cholesky_in_place(&mut l) {
            return Ok((l, jitter));
        }
        factor *= 10.0;
    }
    Err(Error::Cholesky {
        max_jitter: JITTER_MAX * base,
    })
}

/// Solves `L x = b` in place for every column of `b`.
pub fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    for mut col in b.column_iter_mut() {
        let x = col.as_mut_slice();
        for j in 0..n {
            let xj = x[j] / l[(j, j)];
            x[j] = xj;
            if xj != 0.0 {
                let lcol = &l.as_slice()[j * n + j + 1..(j + 1) * n];
                for (xi, lij) in x[j + 1..n].iter_mut().zip(lcol) {
                    *xi -= lij * xj;
                }
            }
        }
    }
}

/// Solves `L^T x = b` in place for every column of `b`.
pub fn solve_upper_transposed_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    for mut col in b.column_iter_mut() {
        let x = col.as_mut_slice();
        for j in (0..n).rev() {
            let lcol = &l.as_slice()[j * n + j + 1..(j + 1) * n];
            let dot: f64 = lcol.iter().zip(&x[j + 1..n]).map(|(a, b)| a * b).sum();
            x[j] = (x[j] - dot) / l[(j, j)];
        }
    }
}

/// `(L L^T)^{-1} b`.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    solve_lower_in_place(l, &mut x);
    solve_upper_transposed_in_place(l, &mut x);
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        &b * b.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn factor_reconstructs() {
        let a = spd(9);
        let (l, jitter) = cholesky_with_jitter(&a).unwrap();
        assert_eq!(jitter, 0.0);
        let err = (&l * l.transpose() - &a).norm() / a.norm();
        assert!(err < 1e-14, "{err}");
        for j in 1..9 {
            for i in 0..j {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn solves_match_lu() {
        let a = spd(7);
        let b = DMatrix::from_fn(7, 3, |i, j| (i as f64 - j as f64).sin());
        let (l, _) = cholesky_with_jitter(&a).unwrap();
        let x = cholesky_solve(&l, &b);
        let want = a.clone().lu().solve(&b).unwrap();
        assert!((x - want).amax() < 1e-12);
    }

    #[test]
    fn singular_matrix_gets_jitter() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let (l, jitter) = cholesky_with_jitter(&a).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-6);
        let mut shifted = a.clone();
        for i in 0..3 {
            shifted[(i, i)] += jitter;
        }
        assert!((&l * l.transpose() - shifted).norm() < 1e-12);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky_with_jitter(&a), Err(Error::Cholesky { .. })));
    }
}
