use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "syscall")]
    SyscallTrace,
    #[serde(rename = "hprof")]
    HprofDump,
}

const SYSCALL_86: &str = include_str!("../../schemas/syscall_86.json");
const HPROF_72: &str = include_str!("../../schemas/hprof_72.json");

/// Ordered feature names defining a vector layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FeatureSchema {
    kind: FeatureKind,
    names: Vec<String>,
}

#[derive(Deserialize)]
struct SchemaFile {
    kind: FeatureKind,
    names: Vec<String>,
}

impl<'de> Deserialize<'de> for FeatureSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = SchemaFile::deserialize(d)?;
        FeatureSchema::new(raw.kind, raw.names).map_err(serde::de::Error::custom)
    }
}

impl FeatureSchema {
    /// Names must be unique and there must be at least two.
    pub fn new(kind: FeatureKind, names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::contract(format!(
                "schema needs at least 2 features, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(Error::contract("empty feature name"));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::contract(format!("duplicate feature name {n:?}")));
            }
        }
        Ok(FeatureSchema { kind, names })
    }

    /// The shipped 86-syscall layout (a reconstruction; see `schemas/`).
    pub fn default_syscall() -> Self {
        serde_json::from_str(SYSCALL_86).expect("bundled syscall schema")
    }

    /// The shipped 72 system-service class layout (a reconstruction; see `schemas/`).
    pub fn default_hprof() -> Self {
        serde_json::from_str(HPROF_72).expect("bundled hprof schema")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_schemas() {
        let s = FeatureSchema::default_syscall();
        assert_eq!(s.dim(), 86);
        assert_eq!(s.kind(), FeatureKind::SyscallTrace);
        assert_eq!(s.names()[0], "accept");
        assert_eq!(s.names()[85], "writev");
        let h = FeatureSchema::default_hprof();
        assert_eq!(h.dim(), 72);
        assert_eq!(h.kind(), FeatureKind::HprofDump);
        assert_eq!(h.names()[0], "AccessibilityManager");
        assert_eq!(h.names()[71], "WindowManager");
    }

    #[test]
    fn rejects_duplicates_and_tiny() {
        let dup = FeatureSchema::new(FeatureKind::HprofDump, vec!["a".into(), "a".into()]);
        assert!(dup.is_err());
        assert!(FeatureSchema::new(FeatureKind::HprofDump, vec!["a".into()]).is_err());
        let bad: Result<FeatureSchema, _> =
            serde_json::from_str(r#"{"kind":"syscall","names":["x","x"]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn json_shape() {
        let s = FeatureSchema::new(FeatureKind::HprofDump, vec!["A".into(), "B".into()]).unwrap();
        assert_eq!(
            serde_json::to_string(&s).unwrap(),
            r#"{"kind":"hprof","names":["A","B"]}"#
        );
    }
}
