use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spotcheck::eval::DEFAULT_PERCENTILE;
use spotcheck::kpca::{log_grid, KpcaConfig, DEFAULT_LAMBDA_P};
use spotcheck::numerics::AdamConfig;
use spotcheck::vae::{TrainConfig, DEFAULT_SCORE_SAMPLES, VAR_FLOOR};
use spotcheck::Detector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KpcaParams {
    pub r: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_count: usize,
    pub folds: usize,
    pub lambda_p: f64,
}

impl Default for KpcaParams {
    fn default() -> Self {
        KpcaParams {
            r: 2,
            gamma_min: 0.01,
            gamma_max: 0.5,
            gamma_count: 25,
            folds: 3,
            lambda_p: DEFAULT_LAMBDA_P,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeParams {
    /// Numbered configuration 1-6.
    pub topology: u8,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Latent samples per scored row.
    pub samples: usize,
}

impl Default for VaeParams {
    fn default() -> Self {
        VaeParams {
            topology: 3,
            epochs: 2000,
            batch_size: 128,
            adam: AdamConfig::default(),
            samples: DEFAULT_SCORE_SAMPLES,
        }
    }
}

/// Everything that determines a run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub schema: Option<PathBuf>,
    pub detector: Detector,
    pub kpca: KpcaParams,
    pub vae: VaeParams,
    /// Benign-validation percentile used to pick the threshold.
    pub percentile: f64,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            schema: None,
            detector: Detector::Kpca,
            kpca: KpcaParams::default(),
            vae: VaeParams::default(),
            percentile: DEFAULT_PERCENTILE,
            dataset: None,
            model: None,
            out_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        for (what, path) in [
            ("schema", &self.schema),
            ("dataset", &self.dataset),
            ("model", &self.model),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    bail!("{what} file {} does not exist", p.display());
                }
            }
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            bail!("percentile must lie in (0, 100), got {}", self.percentile);
        }
        let k = &self.kpca;
        if k.r == 0 || k.gamma_count == 0 || k.folds < 2 {
            bail!("kpca needs r >= 1, gamma_count >= 1 and folds >= 2");
        }
        if !(k.gamma_min > 0.0 && k.gamma_max >= k.gamma_min && k.gamma_max.is_finite()) {
            bail!("kpca gamma bounds must satisfy 0 < gamma_min <= gamma_max");
        }
        if k.lambda_p.is_nan() || k.lambda_p <= 0.0 {
            bail!("kpca lambda_p must be positive");
        }
        let v = &self.vae;
        if !(1..=6).contains(&v.topology) {
            bail!("vae topology must be 1-6, got {}", v.topology);
        }
        if v.epochs == 0 || v.batch_size == 0 || v.samples == 0 {
            bail!("vae epochs, batch_size and samples must be at least 1");
        }
        Ok(())
    }

    pub fn kpca_config(&self) -> KpcaConfig {
        let k = &self.kpca;
        KpcaConfig {
            r: k.r,
            grid: log_grid(k.gamma_min, k.gamma_max, k.gamma_count),
            folds: k.folds,
            lambda_p: k.lambda_p,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.vae.epochs,
            batch_size: self.vae.batch_size,
            adam: self.vae.adam,
            seed: self.seed,
            var_floor: VAR_FLOOR,
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs go.
    pub fn digest(&self) -> String {
        let keyed = RunConfig {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&keyed).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
