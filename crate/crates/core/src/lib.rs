//! Anomaly detection over app-behavior histograms.
//!
//! Two detectors are trained on benign apps only: kernel PCA with an RBF
//! kernel, scored by input-space reconstruction error, and a variational
//! autoencoder, scored by Monte-Carlo reconstruction log-probability. Inputs
//! are syscall-count histograms or system-service class instance counts
//! pulled out of HPROF heap dumps.

pub mod error;
pub mod eval;
pub mod featurize;
pub mod hprof;
pub mod kpca;
pub mod numerics;
pub mod vae;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Kpca,
    Vae,
}

impl Detector {
    /// Whether a larger raw score means more anomalous.
    pub fn direction(self) -> eval::Direction {
        match self {
            Detector::Kpca => eval::Direction::HigherIsAnomalous,
            Detector::Vae => eval::Direction::LowerIsAnomalous,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Anomaly,
    Normal,
}

/// One scored datapoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub app_id: String,
    /// Reconstruction MSE (KPCA) or log reconstruction probability (VAE).
    pub score: f64,
    pub verdict: Verdict,
    pub detector: Detector,
}
