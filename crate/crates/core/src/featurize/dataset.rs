use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureSchema, FeatureVector, Label};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Prng};

const MIN_BENIGN_FOR_SPLIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    /// Not yet assigned (`-` in CSV).
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "-",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "-" => Ok(Split::Unassigned),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

/// Schema-aligned rows with per-row split tags.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub rows: Vec<FeatureVector>,
    pub splits: Vec<Split>,
}

impl Dataset {
    /// Rows all tagged [`Split::Unassigned`].
    pub fn unsplit(schema: FeatureSchema, rows: Vec<FeatureVector>) -> Result<Self> {
        let splits = vec![Split::Unassigned; rows.len()];
        let ds = Dataset {
            schema,
            rows,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != self.splits.len() {
            return Err(Error::LengthMismatch {
                left: self.rows.len(),
                right: self.splits.len(),
            });
        }
        for (row, split) in self.rows.iter().zip(&self.splits) {
            if row.values.len() != self.schema.dim() {
                return Err(Error::contract(format!(
                    "row {:?} has {} values, schema has {}",
                    row.app_id,
                    row.values.len(),
                    self.schema.dim()
                )));
            }
            if matches!(split, Split::Train | Split::Val) && row.label != Label::Benign {
                return Err(Error::contract(format!(
                    "row {:?} is {} but tagged {}",
                    row.app_id, row.label, split
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    pub fn subset(&self, split: Split) -> Vec<&FeatureVector> {
        self.indices(split)
            .into_iter()
            .map(|i| &self.rows[i])
            .collect()
    }

    /// Feature matrix of the rows carrying `split`.
    pub fn matrix(&self, split: Split) -> Matrix {
        let rows: Vec<&[f64]> = self
            .subset(split)
            .iter()
            .map(|r| r.values.as_slice())
            .collect();
        if rows.is_empty() {
            return Matrix::zeros(0, self.schema.dim());
        }
        Matrix::from_rows(&rows)
    }
}

/// Seeded benign-only split.
///
/// Benign rows are shuffled, then `floor(val * n)` go to validation,
/// `floor(test * n)` to test and the remainder to train. Malicious and
/// unlabeled rows always go to test.
pub fn split_dataset(
    schema: FeatureSchema,
    rows: Vec<FeatureVector>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Dataset> {
    let SplitRatios { train, val, test } = ratios;
    if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r))
        || (train + val + test - 1.0).abs() > 1e-9
    {
        return Err(Error::contract(format!(
            "split ratios must be in [0,1] and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    let mut benign: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].label == Label::Benign)
        .collect();
    let n = benign.len();
    if n < MIN_BENIGN_FOR_SPLIT {
        return Err(Error::Degenerate(format!(
            "need at least {MIN_BENIGN_FOR_SPLIT} benign rows to split, got {n}"
        )));
    }
    Prng::new(seed).shuffle(&mut benign);
    // The epsilon keeps products like 0.15 * 60 from flooring one short.
    let n_val = (val * n as f64 + 1e-9).floor() as usize;
    let n_test = (test * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut splits = vec![Split::Test; rows.len()];
    for (rank, &i) in benign.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let ds = Dataset {
        schema,
        rows,
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

/// Parameters for [`gen_synth`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dim: usize,
    pub n_benign: usize,
    pub n_anomalous: usize,
    /// Separation in `[0, 1]`; 0 makes both classes identically distributed.
    pub delta: f64,
    pub seed: u64,
}

const VALUE_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

/// Dirichlet-distributed synthetic histograms.
///
/// Benign concentrations are 10 on the first `ceil(dim/8)` features and 0.5
/// elsewhere; anomalous concentrations are the benign ones rotated right by
/// `floor(delta * dim / 2)`. Benign rows are emitted first, then anomalous
/// rows, and the result is split with the same seed.
pub fn gen_synth(spec: SynthSpec) -> Result<Dataset> {
    let SynthSpec {
        dim,
        n_benign,
        n_anomalous,
        delta,
        seed,
    } = spec;
    if dim < 4 {
        return Err(Error::contract(format!(
            "synthetic dim must be >= 4, got {dim}"
        )));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::contract(format!(
            "delta must lie in [0, 1], got {delta}"
        )));
    }
    let heavy = dim.div_ceil(8);
    let benign_conc: Vec<f64> = (0..dim)
        .map(|i| if i < heavy { 10.0 } else { 0.5 })
        .collect();
    let shift = (delta * dim as f64 / 2.0).floor() as usize % dim;
    let mut anom_conc = benign_conc.clone();
    anom_conc.rotate_right(shift);

    let benign_dists = gammas(&benign_conc);
    let anom_dists = gammas(&anom_conc);
    // The split below shuffles with `seed` itself; values come from a separate stream.
    let mut prng = Prng::new(seed ^ VALUE_STREAM);
    let mut rows = Vec::with_capacity(n_benign + n_anomalous);
    for i in 0..n_benign {
        rows.push(FeatureVector {
            app_id: format!("synth-b{i:05}"),
            label: Label::Benign,
            values: dirichlet(&benign_dists, &mut prng),
        });
    }
    for i in 0..n_anomalous {
        rows.push(FeatureVector {
            app_id: format!("synth-a{i:05}"),
            label: Label::Malicious,
            values: dirichlet(&anom_dists, &mut prng),
        });
    }
    let names = (0..dim).map(|i| format!("f{i:03}")).collect();
    let schema = FeatureSchema::new(FeatureKind::SyscallTrace, names)?;
    split_dataset(schema, rows, SplitRatios::default(), seed)
}

fn gammas(conc: &[f64]) -> Vec<Gamma<f64>> {
    conc.iter()
        .map(|&c| Gamma::new(c, 1.0).expect("positive concentration"))
        .collect()
}

fn dirichlet(dists: &[Gamma<f64>], prng: &mut Prng) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = dists.iter().map(|g| g.sample(prng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|d| d / total).collect();
        }
    }
}
