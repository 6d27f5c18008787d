//! Dense lower-triangular Cholesky factorization with a single jitter retry.

use ndarray::Array2;

use crate::{Error, Result};

/// Relative pivot tolerance and jitter size, both scaled by the largest
/// diagonal entry of the input.
const PIVOT_REL_TOL: f64 = 1e-12;

/// Returns lower-triangular B with B * B^T ~= a.
///
/// Accepts positive semidefinite input: if a pivot falls below
/// `1e-12 * max_diag`, the factorization restarts once with that much jitter
/// added to the whole diagonal. A pivot failure after the retry reports the
/// offending pivot index.
pub fn cholesky_factor(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidSpec("cholesky of an empty matrix".into()));
    }
    let mut max_abs = 0.0f64;
    for &x in a.iter() {
        if !x.is_finite() {
            return Err(Error::InvalidSpec("cholesky input contains a non-finite entry".into()));
        }
        max_abs = max_abs.max(x.abs());
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-8 * max_abs.max(1.0) {
                return Err(Error::InvalidSpec(format!(
                    "cholesky input is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let max_diag = (0..n).map(|i| a[[i, i]]).fold(f64::NEG_INFINITY, f64::max);
    if max_diag < 0.0 {
        return Err(Error::NotPositiveSemidefinite { pivot: 0 });
    }
    let tol = PIVOT_REL_TOL * max_diag;
    match attempt(a, 0.0, tol) {
        Ok(b) => Ok(b),
        Err(_) => attempt(a, tol, tol).map_err(|pivot| Error::NotPositiveSemidefinite { pivot }),
    }
}

/// One factorization sweep; `Err(j)` reports the first pivot below `tol`.
fn attempt(a: &Array2<f64>, jitter: f64, tol: f64) -> std::result::Result<Array2<f64>, usize> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut pivot = a[[j, j]] + jitter;
        for k in 0..j {
            pivot -= l[[j, k]] * l[[j, k]];
        }
        if pivot < tol || !pivot.is_finite() {
            return Err(j);
        }
        let ljj = pivot.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(l)
}
