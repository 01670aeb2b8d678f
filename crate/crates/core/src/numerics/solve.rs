use super::Matrix;
use crate::error::{Error, Result};

/// Solves `(G + lambda I) A = B` by Cholesky factorization.
///
/// `G` must be symmetric and `G + lambda I` positive definite; a non-positive
/// pivot is reported as [`Error::Singular`].
pub fn ridge_solve(g: &Matrix, b: &Matrix, lambda: f64) -> Result<Matrix> {
    if !g.is_square() || g.rows() != b.rows() {
        return Err(Error::contract(format!(
            "ridge_solve shapes: G {}x{}, B {}x{}",
            g.rows(),
            g.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::contract(format!(
            "ridge lambda must be >= 0, got {lambda}"
        )));
    }
    if !g.is_symmetric(1e-9 * g.max_abs().max(1.0)) {
        return Err(Error::contract("ridge_solve needs a symmetric G"));
    }
    let mut shifted = g.clone();
    for i in 0..g.rows() {
        shifted[(i, i)] += lambda;
    }
    cholesky_solve(&shifted, b)
}

/// Solves `S X = B` for symmetric positive-definite `S`.
pub fn cholesky_solve(s: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = s.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= 0.0 {
            return Err(Error::Singular { row: j, pivot: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut v = s[(i, j)];
            let (li, lj) = (l.row(i), l.row(j));
            for k in 0..j {
                v -= li[k] * lj[k];
            }
            l[(i, j)] = v / d;
        }
    }

    let m = b.cols();
    let mut x = b.clone();
    // Forward: L Y = B.
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            if lik == 0.0 {
                continue;
            }
            for c in 0..m {
                x[(i, c)] -= lik * x[(k, c)];
            }
        }
        let d = l[(i, i)];
        for c in 0..m {
            x[(i, c)] /= d;
        }
    }
    // Backward: Lᵀ X = Y.
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l[(k, i)];
            if lki == 0.0 {
                continue;
            }
            for c in 0..m {
                x[(i, c)] -= lki * x[(k, c)];
            }
        }
        let d = l[(i, i)];
        for c in 0..m {
            x[(i, c)] /= d;
        }
    }
    Ok(x)
}
