//! Behavior histograms and labeled datasets.
//!
//! Raw observations (syscall events or heap class-instance counts) become
//! [`RawHistogram`]s keyed by feature name, then schema-ordered
//! [`FeatureVector`]s on the L1 simplex via [`l1_scale`].

mod dataset;
mod io;
mod schema;
mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{gen_synth, split_dataset, Dataset, Split, SplitRatios, SynthSpec};
pub use io::{read_dataset_csv, write_dataset_csv, write_histogram_csv};
pub use schema::{FeatureKind, FeatureSchema};
pub use trace::{parse_trace_log, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malicious => "malicious",
            Label::Unknown => "unknown",
        }
    }

    pub fn is_malicious(self) -> bool {
        self == Label::Malicious
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "benign" => Ok(Label::Benign),
            "malicious" => Ok(Label::Malicious),
            "unknown" => Ok(Label::Unknown),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Per-app feature counts before scaling.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawHistogram {
    pub app_id: String,
    pub label: Option<Label>,
    pub counts: BTreeMap<String, u64>,
    /// Observations whose name is outside the schema. Diagnostics only.
    pub dropped: BTreeMap<String, u64>,
}

impl RawHistogram {
    pub fn new(app_id: impl Into<String>) -> Self {
        RawHistogram {
            app_id: app_id.into(),
            ..Default::default()
        }
    }

    pub fn label(&self) -> Label {
        self.label.unwrap_or(Label::Unknown)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    /// Adds another histogram's counts into this one.
    pub fn merge(&mut self, other: &RawHistogram) {
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.dropped {
            *self.dropped.entry(k.clone()).or_default() += v;
        }
    }
}

/// A histogram scaled to fractions of its total, in schema order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub app_id: String,
    pub label: Label,
    pub values: Vec<f64>,
}

/// Attribute-ratio scaling: each count divided by the histogram's L1 norm
/// over the schema's features. Names missing from the histogram are zero.
pub fn l1_scale(h: &RawHistogram, schema: &FeatureSchema) -> Result<FeatureVector> {
    let counts: Vec<u64> = schema
        .names()
        .iter()
        .map(|n| h.counts.get(n).copied().unwrap_or(0))
        .collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Degenerate(format!(
            "histogram for {:?} has no counts over the schema",
            h.app_id
        )));
    }
    let total = total as f64;
    Ok(FeatureVector {
        app_id: h.app_id.clone(),
        label: h.label(),
        values: counts.iter().map(|&c| c as f64 / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema(dim: usize) -> FeatureSchema {
        FeatureSchema::new(
            FeatureKind::SyscallTrace,
            (1..=dim).map(|i| format!("f{i}")).collect(),
        )
        .unwrap()
    }

    fn hist(pairs: &[(&str, u64)]) -> RawHistogram {
        let mut h = RawHistogram::new("a");
        for (k, v) in pairs {
            h.counts.insert(k.to_string(), *v);
        }
        h
    }

    #[test]
    fn symmetric_mass() {
        let v = l1_scale(&hist(&[("f1", 2), ("f2", 2)]), &schema(4)).unwrap();
        assert_eq!(v.values, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn single_mass() {
        let v = l1_scale(&hist(&[("f1", 1)]), &schema(3)).unwrap();
        assert_eq!(v.values, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let err = l1_scale(&hist(&[("f1", 0)]), &schema(3)).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
        // Counts outside the schema do not rescue it.
        let err = l1_scale(&hist(&[("zz", 5)]), &schema(3)).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn scaled_vectors_on_simplex_and_scale_invariant(
            counts in proptest::collection::vec(0u64..10_000, 8),
            k in 1u64..1000,
        ) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let s = schema(8);
            let mut h = RawHistogram::new("x");
            let mut hk = RawHistogram::new("x");
            for (i, c) in counts.iter().enumerate() {
                h.counts.insert(format!("f{}", i + 1), *c);
                hk.counts.insert(format!("f{}", i + 1), *c * k);
            }
            let v = l1_scale(&h, &s).unwrap();
            prop_assert!(v.values.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((v.values.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert_eq!(v.values, l1_scale(&hk, &s).unwrap().values);
        }
    }
}
