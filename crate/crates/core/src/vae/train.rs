use std::io::Write;

use serde::{Deserialize, Serialize};

use super::grad::loss_with_noise;
use super::{all_finite, init_vae, VaeModel, VaeTopology, VAR_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Matrix, Prng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub var_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
            var_floor: VAR_FLOOR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("epochs and batch size must be at least 1"));
        }
        if !(self.var_floor > 0.0 && self.var_floor.is_finite()) {
            return Err(Error::contract("variance floor must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub epochs: Vec<EpochLoss>,
}

impl LossHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// Trailing moving average of the training loss; one value per full window.
    pub fn smoothed_train_loss(&self, window: usize) -> Vec<f64> {
        assert!(window > 0, "window must be positive");
        self.train_losses()
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect()
    }

    /// `epoch,train_loss,val_loss`; the last column is empty without validation data.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,train_loss,val_loss")?;
        for e in &self.epochs {
            match e.val_loss {
                Some(v) => writeln!(w, "{},{},{}", e.epoch, e.train_loss, v)?,
                None => writeln!(w, "{},{},", e.epoch, e.train_loss)?,
            }
        }
        Ok(())
    }
}

/// Derives an independent PRNG stream from the run seed.
fn stream(seed: u64, k: u64) -> Prng {
    Prng::new(seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn check_rows(x: &Matrix, dim: usize, what: &str) -> Result<()> {
    if x.cols() != dim {
        return Err(Error::contract(format!(
            "{what} rows have {} features, topology expects {dim}",
            x.cols()
        )));
    }
    for (i, row) in x.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|v| v.is_nan() || *v < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!("{what} row {i} is not L1-scaled")));
        }
    }
    Ok(())
}

/// Trains on `x_train` with shuffled minibatches and Adam for a fixed number
/// of epochs and returns the final model with per-epoch losses.
///
/// Initialization, shuffling and noise come from separate streams of
/// `config.seed`, so a seed fixes the result bit for bit. Validation loss
/// reuses the same noise every epoch.
pub fn train_vae(
    x_train: &Matrix,
    x_val: Option<&Matrix>,
    topology: &VaeTopology,
    config: &TrainConfig,
) -> Result<(VaeModel, LossHistory)> {
    config.validate()?;
    topology.validate()?;
    if x_train.rows() == 0 {
        return Err(Error::contract("no training rows"));
    }
    check_rows(x_train, topology.input_dim, "training")?;
    let x_val = x_val.filter(|v| v.rows() > 0);
    if let Some(v) = x_val {
        check_rows(v, topology.input_dim, "validation")?;
    }

    let mut model = init_vae(topology, config.seed)?;
    model.var_floor = config.var_floor;
    let d = topology.latent_dim;
    let mut shuffle_rng = stream(config.seed, 1);
    let mut noise_rng = stream(config.seed, 2);
    let val_noise: Option<Vec<f64>> = x_val.map(|v| {
        let mut r = stream(config.seed, 3);
        (0..v.rows() * d).map(|_| r.next_gaussian()).collect()
    });
    let val_rows: Vec<&[f64]> = x_val.map(|v| v.row_iter().collect()).unwrap_or_default();

    let mut adam = AdamState::new(model.params().len(), config.adam);
    let mut history = LossHistory::default();
    let mut order: Vec<usize> = (0..x_train.rows()).collect();
    let diverged = |epoch, batch, what, history: &LossHistory| Error::Divergence {
        epoch,
        batch,
        what,
        history: Box::new(history.clone()),
    };

    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| x_train.row(i)).collect();
            let eps: Vec<f64> = (0..batch.len() * d)
                .map(|_| noise_rng.next_gaussian())
                .collect();
            let (value, grad) = loss_with_noise(&model, &batch, &eps, 1, true)?;
            if !value.is_finite() {
                return Err(diverged(epoch, b, "loss", &history));
            }
            if !all_finite(&grad) {
                return Err(diverged(epoch, b, "gradient", &history));
            }
            total += value * batch.len() as f64;
            adam.step(model.params_mut(), &grad);
            if !model.is_finite() {
                return Err(diverged(epoch, b, "parameters", &history));
            }
        }
        let val_loss = match &val_noise {
            Some(eps) => {
                let v = loss_with_noise(&model, &val_rows, eps, 1, false)?.0;
                if !v.is_finite() {
                    return Err(diverged(epoch, 0, "validation loss", &history));
                }
                Some(v)
            }
            None => None,
        };
        history.epochs.push(EpochLoss {
            epoch,
            train_loss: total / x_train.rows() as f64,
            val_loss,
        });
    }
    Ok((model, history))
}
