//! Deterministic numeric kernel shared by the detectors.
//!
//! Everything here runs in `f64`. Results are bitwise reproducible for a
//! fixed input: no internal parallelism, no platform-dependent reductions.

mod adam;
mod eigen;
mod matrix;
mod prng;
mod solve;

pub use adam::{AdamConfig, AdamState};
pub use eigen::{sym_eig, SymEigen};
pub use matrix::Matrix;
pub use prng::Prng;
pub use solve::{cholesky_solve, ridge_solve};

/// `exp(-gamma * ||x - y||^2)`.
///
/// Panics if `gamma <= 0` or the lengths differ.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    assert!(
        gamma > 0.0,
        "rbf_kernel: gamma must be positive, got {gamma}"
    );
    (-gamma * sq_dist(x, y)).exp()
}

pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "dimension mismatch");
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// RBF Gram matrix over the rows of `x`.
pub fn rbf_gram(x: &Matrix, gamma: f64) -> Matrix {
    let m = x.rows();
    let mut k = Matrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = rbf_kernel(x.row(i), x.row(j), gamma);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `log(mean(exp(values)))`, evaluated in max-shifted form.
///
/// Returns `-inf` for an empty slice or when every value is `-inf`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (sum / values.len() as f64).ln()
}

/// Elementwise `mu + sqrt(var) * N(0, 1)`.
///
/// Panics on a negative variance.
pub fn gaussian_sample(prng: &mut Prng, mu: &[f64], var: &[f64]) -> Vec<f64> {
    assert_eq!(mu.len(), var.len(), "gaussian_sample: shape mismatch");
    mu.iter()
        .zip(var)
        .map(|(&m, &v)| {
            assert!(v >= 0.0, "gaussian_sample: negative variance {v}");
            let e = prng.next_gaussian();
            if v == 0.0 {
                m
            } else {
                m + v.sqrt() * e
            }
        })
        .collect()
}

/// Median of a non-empty slice (mean of the two middle values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rbf_self_is_one() {
        let x = [0.3, 0.1, 0.6];
        assert_eq!(rbf_kernel(&x, &x, 0.25), 1.0);
    }

    #[test]
    fn rbf_unit_distance() {
        let v = rbf_kernel(&[0.0, 0.0], &[1.0, 0.0], 0.5);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn rbf_symmetric_over_random_pairs() {
        let mut prng = Prng::new(11);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..5).map(|_| prng.next_f64()).collect();
            let y: Vec<f64> = (0..5).map(|_| prng.next_f64()).collect();
            let g = 0.01 + prng.next_f64();
            assert_eq!(rbf_kernel(&x, &y, g), rbf_kernel(&y, &x, g));
        }
    }

    #[test]
    fn rbf_monotone_in_distance() {
        let mut last = 1.0;
        for k in 1..50 {
            let v = rbf_kernel(&[0.0], &[k as f64 * 0.1], 0.3);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    #[should_panic(expected = "gamma must be positive")]
    fn rbf_rejects_nonpositive_gamma() {
        rbf_kernel(&[0.0], &[1.0], 0.0);
    }

    #[test]
    fn log_mean_exp_constant() {
        assert_eq!(log_mean_exp(&[-3.5, -3.5, -3.5]), -3.5);
        assert_eq!(log_mean_exp(&[1200.0, 1200.0]), 1200.0);
    }

    #[test]
    fn log_mean_exp_matches_direct_form() {
        let v = [0.1, -0.7, 1.3, 0.0];
        let direct = (v.iter().map(|x: &f64| x.exp()).sum::<f64>() / 4.0).ln();
        assert!((log_mean_exp(&v) - direct).abs() < 1e-14);
        assert_eq!(log_mean_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn zero_variance_returns_mean() {
        let mut prng = Prng::new(3);
        let mu = [1.5, -2.0, 0.25];
        assert_eq!(gaussian_sample(&mut prng, &mu, &[0.0; 3]), mu.to_vec());
    }

    #[test]
    fn gaussian_sample_mean_within_three_sigma() {
        let mut prng = Prng::new(2024);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| gaussian_sample(&mut prng, &[2.0], &[9.0])[0])
            .sum::<f64>()
            / n as f64;
        assert!(
            (mean - 2.0).abs() < 3.0 * 3.0 / (n as f64).sqrt(),
            "mean {mean}"
        );
    }

    #[test]
    #[should_panic(expected = "negative variance")]
    fn negative_variance_panics() {
        gaussian_sample(&mut Prng::new(1), &[0.0], &[-1.0]);
    }
}
