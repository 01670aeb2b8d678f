use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::featurize::{FeatureVector, Label};
use crate::kpca::KpcaModel;
use crate::vae::VaeModel;

/// A model with a deterministic map into latent space.
pub trait LatentModel {
    fn latent_dim(&self) -> usize;
    fn latent(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl LatentModel for KpcaModel {
    fn latent_dim(&self) -> usize {
        self.r
    }

    fn latent(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features() {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: self.n_features(),
            });
        }
        Ok(self.transform(x))
    }
}

/// Uses the encoder mean; no sampling.
impl LatentModel for VaeModel {
    fn latent_dim(&self) -> usize {
        self.topology.latent_dim
    }

    fn latent(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode(x)?.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatentRow {
    pub app_id: String,
    pub label: Label,
    pub z1: f64,
    pub z2: f64,
}

/// Latent coordinates of every row, in order. Refuses models whose latent
/// space is not two-dimensional.
pub fn export_latent<M: LatentModel>(model: &M, rows: &[FeatureVector]) -> Result<Vec<LatentRow>> {
    let d = model.latent_dim();
    if d != 2 {
        return Err(Error::contract(format!(
            "latent export needs a 2-dimensional latent space, model has {d}"
        )));
    }
    rows.iter()
        .map(|row| {
            let z = model.latent(&row.values)?;
            Ok(LatentRow {
                app_id: row.app_id.clone(),
                label: row.label,
                z1: z[0],
                z2: z[1],
            })
        })
        .collect()
}

pub fn write_latent_csv<W: Write>(w: W, rows: &[LatentRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["app_id", "label", "z1", "z2"])
        .map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.app_id.as_str(),
            r.label.as_str(),
            &r.z1.to_string(),
            &r.z2.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}
