use super::{reparameterize, VaeModel};
use crate::error::{Error, Result};
use crate::featurize::FeatureVector;
use crate::numerics::{log_mean_exp, Prng};
use crate::{AnomalyRecord, Detector, Verdict};

pub const DEFAULT_SCORE_SAMPLES: usize = 128;

/// Diagonal Gaussian log-density of `x`.
pub fn log_density(x: &[f64], mu: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mu)
        .zip(var)
        .map(|((xi, m), v)| {
            -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (xi - m).powi(2) / (2.0 * v)
        })
        .sum()
}

/// Log of the Monte-Carlo reconstruction probability of `x`: the mean over
/// `samples` posterior draws of the decoder density at `x`, computed in the
/// log domain.
pub fn recon_log_prob(model: &VaeModel, x: &[f64], prng: &mut Prng, samples: usize) -> Result<f64> {
    if samples == 0 {
        return Err(Error::contract("need at least one latent sample"));
    }
    let (mu, log_var) = model.encode(x)?;
    let mut logs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let z = reparameterize(prng, &mu, &log_var);
        let d = model.decode(&z)?;
        logs.push(log_density(x, &d.mu, &d.var));
    }
    Ok(log_mean_exp(&logs))
}

/// Scores each row with its own PRNG seeded from `seed ^ index`, so a row's
/// score does not depend on the other rows.
pub fn vae_scores(
    model: &VaeModel,
    rows: &[&[f64]],
    seed: u64,
    samples: usize,
) -> Result<Vec<f64>> {
    rows.iter()
        .enumerate()
        .map(|(i, x)| recon_log_prob(model, x, &mut Prng::new(seed ^ i as u64), samples))
        .collect()
}

/// Scores rows in order; `Anomaly` iff the log reconstruction probability is
/// below `alpha`.
pub fn vae_score(
    model: &VaeModel,
    rows: &[FeatureVector],
    alpha: f64,
    seed: u64,
    samples: usize,
) -> Result<Vec<AnomalyRecord>> {
    if alpha.is_nan() {
        return Err(Error::contract("threshold is NaN"));
    }
    let xs: Vec<&[f64]> = rows.iter().map(|r| r.values.as_slice()).collect();
    let scores = vae_scores(model, &xs, seed, samples)?;
    Ok(rows
        .iter()
        .zip(scores)
        .map(|(row, score)| AnomalyRecord {
            app_id: row.app_id.clone(),
            score,
            verdict: if score < alpha {
                Verdict::Anomaly
            } else {
                Verdict::Normal
            },
            detector: Detector::Vae,
        })
        .collect())
}
