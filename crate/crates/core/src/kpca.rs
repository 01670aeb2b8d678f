//! Kernel PCA anomaly detector.
//!
//! Fit on benign rows: RBF Gram matrix, double centering, Jacobi
//! eigendecomposition, top-`r` components scaled by `1/sqrt(lambda)`. Because
//! kernel PCA has no exact inverse, reconstruction uses a kernel-ridge map
//! from latent points back to input space, fitted on the training latents.
//! The anomaly score is the input-space MSE between a point and its
//! reconstruction.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureVector;
use crate::numerics::{median, rbf_gram, rbf_kernel, ridge_solve, sq_dist, sym_eig, Matrix, Prng};
use crate::{AnomalyRecord, Detector, Verdict};

pub const FORMAT: &str = "kpca-v1";
pub const EIGEN_FLOOR: f64 = 1e-10;
pub const DEFAULT_LAMBDA_P: f64 = 1e-3;

/// `count` log-spaced values spanning `[lo, hi]`, endpoints exact.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && count >= 1);
    if count == 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).ln();
    (0..count)
        .map(|k| {
            if k == 0 {
                lo
            } else if k == count - 1 {
                hi
            } else {
                lo * (ratio * k as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpcaConfig {
    pub r: usize,
    pub grid: Vec<f64>,
    pub folds: usize,
    pub lambda_p: f64,
    /// Seeds the cross-validation fold assignment.
    pub seed: u64,
}

impl Default for KpcaConfig {
    fn default() -> Self {
        KpcaConfig {
            r: 2,
            grid: log_grid(0.01, 0.5, 25),
            folds: 3,
            lambda_p: DEFAULT_LAMBDA_P,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    pub row_means: Vec<f64>,
    pub grand_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preimage {
    /// Dual coefficients, one row per training point.
    #[serde(rename = "A")]
    pub coef: Matrix,
    pub gamma_p: f64,
    pub lambda_p: f64,
}

/// A fitted kernel PCA model. Serializes to the `kpca-v1` JSON layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KpcaFile", into = "KpcaFile")]
pub struct KpcaModel {
    pub gamma: f64,
    pub r: usize,
    pub x_train: Matrix,
    pub centering: Centering,
    /// `m x r`; column `i` is the `i`-th eigenvector of the centered Gram
    /// matrix divided by `sqrt(lambda_i)`.
    pub components: Matrix,
    pub eigenvalues: Vec<f64>,
    pub preimage: Preimage,
    latents: Matrix,
}

#[derive(Serialize, Deserialize)]
struct KpcaFile {
    format: String,
    gamma: f64,
    r: usize,
    centering: Centering,
    #[serde(rename = "U_r")]
    u_r: Matrix,
    lambda_r: Vec<f64>,
    #[serde(rename = "X_train")]
    x_train: Matrix,
    preimage: Preimage,
}

impl From<KpcaModel> for KpcaFile {
    fn from(m: KpcaModel) -> Self {
        KpcaFile {
            format: FORMAT.into(),
            gamma: m.gamma,
            r: m.r,
            centering: m.centering,
            u_r: m.components,
            lambda_r: m.eigenvalues,
            x_train: m.x_train,
            preimage: m.preimage,
        }
    }
}

impl TryFrom<KpcaFile> for KpcaModel {
    type Error = Error;

    fn try_from(f: KpcaFile) -> Result<Self> {
        if f.format != FORMAT {
            return Err(Error::Format(format!(
                "expected {FORMAT}, found {:?}",
                f.format
            )));
        }
        let m = f.x_train.rows();
        let consistent = f.r >= 1
            && f.gamma > 0.0
            && f.u_r.rows() == m
            && f.u_r.cols() == f.r
            && f.lambda_r.len() == f.r
            && f.centering.row_means.len() == m
            && f.preimage.coef.rows() == m
            && f.preimage.coef.cols() == f.x_train.cols()
            && f.preimage.gamma_p > 0.0;
        if !consistent {
            return Err(Error::Format("inconsistent kpca-v1 shapes".into()));
        }
        let mut model = KpcaModel {
            gamma: f.gamma,
            r: f.r,
            x_train: f.x_train,
            centering: f.centering,
            components: f.u_r,
            eigenvalues: f.lambda_r,
            preimage: f.preimage,
            latents: Matrix::zeros(0, 0),
        };
        model.latents = model.transform_rows(&model.x_train);
        Ok(model)
    }
}

/// Centered RBF Gram matrix `K - 1K - K1 + 1K1` with its centering statistics.
pub fn centered_gram(x: &Matrix, gamma: f64) -> (Matrix, Centering) {
    let mut k = rbf_gram(x, gamma);
    let m = k.rows();
    let row_means: Vec<f64> = k
        .row_iter()
        .map(|r| r.iter().sum::<f64>() / m as f64)
        .collect();
    let grand_mean = row_means.iter().sum::<f64>() / m as f64;
    for i in 0..m {
        for j in 0..m {
            k[(i, j)] += grand_mean - row_means[i] - row_means[j];
        }
    }
    (
        k,
        Centering {
            row_means,
            grand_mean,
        },
    )
}

fn check_rows(x: &Matrix, min_rows: usize) -> Result<()> {
    if x.rows() < min_rows {
        return Err(Error::contract(format!(
            "kpca needs at least {min_rows} training rows, got {}",
            x.rows()
        )));
    }
    if !x.is_finite() {
        return Err(Error::contract("training data has non-finite values"));
    }
    Ok(())
}

impl KpcaModel {
    /// Fits with a fixed kernel width (no grid search).
    pub fn fit_with_gamma(x: &Matrix, gamma: f64, r: usize, lambda_p: f64) -> Result<Self> {
        if gamma.is_nan() || gamma <= 0.0 {
            return Err(Error::contract(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if r == 0 {
            return Err(Error::contract("r must be at least 1"));
        }
        check_rows(x, 2)?;
        let (k_c, centering) = centered_gram(x, gamma);
        let eig = sym_eig(&k_c)?;
        let available = eig.values.iter().take_while(|&&l| l > EIGEN_FLOOR).count();
        if available < r {
            return Err(Error::RankDeficient {
                requested: r,
                available,
            });
        }
        let m = x.rows();
        let mut components = Matrix::zeros(m, r);
        for c in 0..r {
            let s = 1.0 / eig.values[c].sqrt();
            for i in 0..m {
                components[(i, c)] = eig.vectors[(i, c)] * s;
            }
        }
        let mut model = KpcaModel {
            gamma,
            r,
            x_train: x.clone(),
            centering,
            components,
            eigenvalues: eig.values[..r].to_vec(),
            preimage: Preimage {
                coef: Matrix::zeros(0, 0),
                gamma_p: 1.0,
                lambda_p,
            },
            latents: Matrix::zeros(0, 0),
        };
        model.latents = model.transform_rows(x);
        model.preimage = fit_preimage(&model.latents, x, lambda_p)?;
        Ok(model)
    }

    pub fn n_features(&self) -> usize {
        self.x_train.cols()
    }

    /// Latent coordinates of the training rows.
    pub fn training_latents(&self) -> &Matrix {
        &self.latents
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(
            x.len(),
            self.n_features(),
            "kpca_transform: dimension mismatch"
        );
        let m = self.x_train.rows();
        let k: Vec<f64> = self
            .x_train
            .row_iter()
            .map(|xi| rbf_kernel(x, xi, self.gamma))
            .collect();
        let k_mean = k.iter().sum::<f64>() / m as f64;
        let kc: Vec<f64> = k
            .iter()
            .zip(&self.centering.row_means)
            .map(|(ki, rm)| ki - k_mean - rm + self.centering.grand_mean)
            .collect();
        self.components.tr_mul_vec(&kc)
    }

    fn transform_rows(&self, x: &Matrix) -> Matrix {
        let rows: Vec<Vec<f64>> = x.row_iter().map(|r| self.transform(r)).collect();
        if rows.is_empty() {
            return Matrix::zeros(0, self.r);
        }
        Matrix::from_rows(&rows)
    }

    /// Maps a latent point back to input space through the kernel-ridge preimage.
    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.r, "kpca_inverse: latent dimension mismatch");
        let kz: Vec<f64> = self
            .latents
            .row_iter()
            .map(|zi| rbf_kernel(z, zi, self.preimage.gamma_p))
            .collect();
        self.preimage.coef.tr_mul_vec(&kz)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        self.inverse(&self.transform(x))
    }

    /// Mean squared reconstruction error of one point.
    pub fn recon_error(&self, x: &[f64]) -> f64 {
        mse(x, &self.reconstruct(x))
    }

    /// Scores rows in order; `Anomaly` iff the error exceeds `alpha`.
    pub fn score(&self, rows: &[FeatureVector], alpha: f64) -> Vec<AnomalyRecord> {
        rows.iter()
            .map(|row| {
                let score = self.recon_error(&row.values);
                AnomalyRecord {
                    app_id: row.app_id.clone(),
                    score,
                    verdict: if score > alpha {
                        Verdict::Anomaly
                    } else {
                        Verdict::Normal
                    },
                    detector: Detector::Kpca,
                }
            })
            .collect()
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b) / a.len() as f64
}

/// Kernel width for the preimage map: `1 / (2 * median squared pairwise latent distance)`.
pub fn preimage_gamma(latents: &Matrix) -> f64 {
    let m = latents.rows();
    let mut d = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in 0..i {
            d.push(sq_dist(latents.row(i), latents.row(j)));
        }
    }
    let positive: Vec<f64> = d.iter().copied().filter(|&v| v > 0.0).collect();
    let med = if d.is_empty() { 0.0 } else { median(&d) };
    let med = if med > 0.0 {
        med
    } else if !positive.is_empty() {
        median(&positive)
    } else {
        1.0
    };
    1.0 / (2.0 * med)
}

fn fit_preimage(latents: &Matrix, x: &Matrix, lambda_p: f64) -> Result<Preimage> {
    let gamma_p = preimage_gamma(latents);
    let k = rbf_gram(latents, gamma_p);
    let coef = ridge_solve(&k, x, lambda_p)?;
    Ok(Preimage {
        coef,
        gamma_p,
        lambda_p,
    })
}

/// Outcome of a cross-validated search over kernel widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub gamma: f64,
    /// `(gamma, mean held-out MSE)`; `None` where the candidate was skipped.
    pub candidates: Vec<(f64, Option<f64>)>,
}

/// Fold index per row: rows are shuffled with `seed`, then dealt round-robin.
pub fn fold_assignment(m: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..m).collect();
    Prng::new(seed).shuffle(&mut perm);
    let mut fold = vec![0; m];
    for (k, &i) in perm.iter().enumerate() {
        fold[i] = k % folds;
    }
    fold
}

/// Picks the grid value with the lowest mean held-out reconstruction MSE.
///
/// Each fold is held out once while the model is fitted on the rest. Ties go
/// to the smaller gamma. Candidates whose fits fail are skipped with a warning.
pub fn grid_search_gamma(x: &Matrix, cfg: &KpcaConfig) -> Result<GridSearch> {
    if cfg.grid.is_empty() {
        return Err(Error::contract("empty gamma grid"));
    }
    if let Some(g) = cfg.grid.iter().find(|g| g.is_nan() || **g <= 0.0) {
        return Err(Error::contract(format!(
            "gamma candidates must be positive, got {g}"
        )));
    }
    if cfg.folds < 2 {
        return Err(Error::contract("need at least 2 folds"));
    }
    if x.rows() < cfg.folds {
        return Err(Error::contract(format!(
            "{} rows cannot fill {} folds",
            x.rows(),
            cfg.folds
        )));
    }
    if cfg.grid.len() == 1 {
        return Ok(GridSearch {
            gamma: cfg.grid[0],
            candidates: vec![(cfg.grid[0], None)],
        });
    }

    let fold = fold_assignment(x.rows(), cfg.folds, cfg.seed);
    let splits: Vec<(Matrix, Matrix)> = (0..cfg.folds)
        .map(|f| {
            let train: Vec<usize> = (0..x.rows()).filter(|&i| fold[i] != f).collect();
            let held: Vec<usize> = (0..x.rows()).filter(|&i| fold[i] == f).collect();
            (x.select_rows(&train), x.select_rows(&held))
        })
        .collect();

    let mut candidates = Vec::with_capacity(cfg.grid.len());
    let mut best: Option<(f64, f64)> = None;
    let mut last_err = None;
    for &gamma in &cfg.grid {
        let score = cv_score(&splits, gamma, cfg);
        match score {
            Ok(s) => {
                let better = match best {
                    None => true,
                    Some((bg, bs)) => s < bs || (s == bs && gamma < bg),
                };
                if better {
                    best = Some((gamma, s));
                }
                candidates.push((gamma, Some(s)));
            }
            Err(e) => {
                warn!("skipping gamma {gamma}: {e}");
                candidates.push((gamma, None));
                last_err = Some(e);
            }
        }
    }
    let Some((gamma, _)) = best else {
        let last = Box::new(last_err.expect("a skipped candidate recorded its error"));
        return Err(Error::NoCandidates { last });
    };
    Ok(GridSearch { gamma, candidates })
}

fn cv_score(splits: &[(Matrix, Matrix)], gamma: f64, cfg: &KpcaConfig) -> Result<f64> {
    let mut total = 0.0;
    for (train, held) in splits {
        if train.rows() <= cfg.r || held.rows() == 0 {
            return Err(Error::contract(format!(
                "fold too small: {} training rows for r = {}",
                train.rows(),
                cfg.r
            )));
        }
        let model = KpcaModel::fit_with_gamma(train, gamma, cfg.r, cfg.lambda_p)?;
        let fold_mse =
            held.row_iter().map(|x| model.recon_error(x)).sum::<f64>() / held.rows() as f64;
        total += fold_mse;
    }
    let mean = total / splits.len() as f64;
    if mean.is_finite() {
        Ok(mean)
    } else {
        Err(Error::contract("non-finite cross-validation error"))
    }
}

/// Grid search for gamma, then a full fit on all training rows.
pub fn fit_kpca(x: &Matrix, cfg: &KpcaConfig) -> Result<(KpcaModel, GridSearch)> {
    check_rows(x, 3)?;
    let search = grid_search_gamma(x, cfg)?;
    let model = KpcaModel::fit_with_gamma(x, search.gamma, cfg.r, cfg.lambda_p)?;
    Ok((model, search))
}
