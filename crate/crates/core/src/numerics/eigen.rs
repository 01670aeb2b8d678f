use super::Matrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_TOL: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Matrix,
    pub sweeps: usize,
}

impl SymEigen {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i)
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius norm is at most `1e-12 * ||A||_F`
/// or 100 sweeps have run. Eigenvalues come back in descending order with ties
/// kept in original diagonal order. Each eigenvector is signed so that its
/// largest-magnitude entry is positive.
pub fn sym_eig(a: &Matrix) -> Result<SymEigen> {
    if !a.is_square() {
        return Err(Error::contract(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let scale = a.max_abs().max(1.0);
    if !a.is_symmetric(1e-9 * scale) {
        return Err(Error::contract("sym_eig needs a symmetric matrix"));
    }
    if !a.is_finite() {
        return Err(Error::contract("sym_eig input has non-finite entries"));
    }

    let n = a.rows();
    let mut w = a.clone();
    // Symmetrize exactly so row and column updates stay consistent.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (w[(i, j)] + w[(j, i)]);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    // Rows of `vt` are the eigenvectors, so rotations touch contiguous memory.
    let mut vt = Matrix::identity(n);
    let frob = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = OFF_TOL * frob;

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS && off_norm(&w) > tol {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut w, &mut vt, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ties in index order.
    order.sort_by(|&i, &j| w[(j, j)].total_cmp(&w[(i, i)]));

    let values = order.iter().map(|&i| w[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let v = vt.row(src);
        let mut pivot = 0;
        for (k, x) in v.iter().enumerate() {
            if x.abs() > v[pivot].abs() {
                pivot = k;
            }
        }
        let sign = if v.get(pivot).is_some_and(|x| *x < 0.0) {
            -1.0
        } else {
            1.0
        };
        for (k, x) in v.iter().enumerate() {
            vectors[(k, col)] = sign * x;
        }
    }

    Ok(SymEigen {
        values,
        vectors,
        sweeps,
    })
}

fn off_norm(w: &Matrix) -> f64 {
    let n = w.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += w[(i, j)] * w[(i, j)];
        }
    }
    (2.0 * s).sqrt()
}

fn rotate(w: &mut Matrix, vt: &mut Matrix, p: usize, q: usize) {
    let apq = w[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = w[(p, p)];
    let aqq = w[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.is_finite() {
        theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt())
    } else {
        0.0
    };
    if t == 0.0 {
        return;
    }
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let n = w.rows();

    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = w[(p, k)];
        let akq = w[(q, k)];
        let np = c * akp - s * akq;
        let nq = s * akp + c * akq;
        w[(p, k)] = np;
        w[(k, p)] = np;
        w[(q, k)] = nq;
        w[(k, q)] = nq;
    }
    w[(p, p)] = app - t * apq;
    w[(q, q)] = aqq + t * apq;
    w[(p, q)] = 0.0;
    w[(q, p)] = 0.0;

    let cols = vt.cols();
    for k in 0..cols {
        let vp = vt[(p, k)];
        let vq = vt[(q, k)];
        vt[(p, k)] = c * vp - s * vq;
        vt[(q, k)] = s * vp + c * vq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Prng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut prng = Prng::new(seed);
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = 2.0 * prng.next_f64() - 1.0;
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        a
    }

    fn reconstruct(e: &SymEigen) -> Matrix {
        let n = e.values.len();
        let mut vl = e.vectors.clone();
        for i in 0..n {
            for j in 0..n {
                vl[(i, j)] *= e.values[j];
            }
        }
        vl.matmul(&e.vectors.transpose())
    }

    #[test]
    fn analytic_two_by_two() {
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        let e = sym_eig(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vector(0);
        let v1 = e.vector(1);
        assert!((v0[0].abs() - r).abs() < 1e-14 && (v0[0] - v0[1]).abs() < 1e-14);
        assert!((v1[0].abs() - r).abs() < 1e-14 && (v1[0] + v1[1]).abs() < 1e-14);
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let e = sym_eig(&Matrix::identity(5)).unwrap();
        assert!(e.values.iter().all(|&v| v == 1.0));
        assert_eq!(e.vectors, Matrix::identity(5));
    }

    #[test]
    fn random_twenty_reconstructs() {
        let a = random_symmetric(20, 77);
        let e = sym_eig(&a).unwrap();
        let diff = reconstruct(&e);
        let mut err: f64 = 0.0;
        for i in 0..20 {
            for j in 0..20 {
                err = err.max((diff[(i, j)] - a[(i, j)]).abs());
            }
        }
        assert!(err <= 1e-8, "reconstruction error {err}");
        let trace_err = (e.values.iter().sum::<f64>() - a.trace()).abs();
        assert!(trace_err <= 1e-8);
        let vtv = e.vectors.transpose().matmul(&e.vectors);
        for i in 0..20 {
            for j in 0..20 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[(i, j)] - want).abs() <= 1e-8);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigen_equation_holds() {
        let a = random_symmetric(12, 3);
        let e = sym_eig(&a).unwrap();
        let norm = a.max_abs();
        for i in 0..12 {
            let v = e.vector(i);
            let av = a.mul_vec(&v);
            for (x, y) in av.iter().zip(&v) {
                assert!((x - e.values[i] * y).abs() <= 1e-8 * norm);
            }
        }
    }

    #[test]
    fn sign_convention() {
        let a = random_symmetric(8, 9);
        let e = sym_eig(&a).unwrap();
        for i in 0..8 {
            let v = e.vector(i);
            let big = v
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            sym_eig(&Matrix::zeros(2, 3)),
            Err(Error::Contract(_))
        ));
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(sym_eig(&a), Err(Error::Contract(_))));
    }
}
