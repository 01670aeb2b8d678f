use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use spotcheck::kpca::KpcaModel;
use spotcheck::vae::VaeModel;
use spotcheck::Detector;

pub enum AnyModel {
    Kpca(KpcaModel),
    Vae(VaeModel),
}

impl AnyModel {
    pub fn detector(&self) -> Detector {
        match self {
            AnyModel::Kpca(_) => Detector::Kpca,
            AnyModel::Vae(_) => Detector::Vae,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            AnyModel::Kpca(m) => m.n_features(),
            AnyModel::Vae(m) => m.topology.input_dim,
        }
    }

    /// Writes the model JSON with a `run` block naming the config digest and
    /// seed. No timestamps, so identical runs give identical files.
    pub fn save(&self, path: &Path, config_sha256: &str, seed: u64) -> Result<()> {
        let mut value = match self {
            AnyModel::Kpca(m) => serde_json::to_value(m)?,
            AnyModel::Vae(m) => serde_json::to_value(m)?,
        };
        if let Value::Object(map) = &mut value {
            map.insert(
                "run".into(),
                json!({ "config_sha256": config_sha256, "seed": seed }),
            );
        }
        let mut text = serde_json::to_string(&value)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing model {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading model {}", path.display()))?;
        let value: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing model {}", path.display()))?;
        let format = value.get("format").and_then(Value::as_str).unwrap_or("");
        let model = match format {
            spotcheck::kpca::FORMAT => AnyModel::Kpca(serde_json::from_value(value)?),
            spotcheck::vae::FORMAT => AnyModel::Vae(serde_json::from_value(value)?),
            other => bail!("{}: unrecognized model format {other:?}", path.display()),
        };
        Ok(model)
    }
}
