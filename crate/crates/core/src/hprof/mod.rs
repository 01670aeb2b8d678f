//! HPROF heap-dump parsing down to per-class instance counts.
//!
//! Only what the class histogram needs is decoded: strings, class loads and
//! instance dumps. Every other record is length-decoded and skipped. Heap dump
//! subrecords carry no length prefix, so an unknown subrecord tag is fatal.

mod parser;
pub mod writer;

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::featurize::{FeatureKind, FeatureSchema, RawHistogram};

pub use parser::{parse_hprof, HprofParser};

#[derive(Debug, Error)]
pub enum HprofError {
    #[error("not an HPROF file: bad header {0:?}")]
    BadMagic(String),
    #[error("unsupported identifier size {0}")]
    IdSize(u32),
    #[error("truncated input at byte offset {offset} ({context})")]
    Truncated { offset: u64, context: &'static str },
    #[error("unknown heap dump subrecord tag 0x{tag:02X} at byte offset {offset}")]
    UnknownSubrecord { tag: u8, offset: u64 },
    #[error("record at byte offset {offset} is malformed: {msg}")]
    Malformed { offset: u64, msg: String },
    #[error("read failed at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: std::io::Error,
    },
}

/// Counters for everything the parser saw but did not count.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    pub records_by_tag: BTreeMap<u8, u64>,
    /// Top-level records skipped by their length field.
    pub skipped_records: u64,
    pub subrecords_skipped: u64,
    pub duplicate_class_loads: u64,
    /// Instances whose class id never appeared in a LOAD CLASS record.
    pub unresolved_instances: u64,
    /// LOAD CLASS records whose name string id was never defined.
    pub unresolved_class_names: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HprofSummary {
    pub version: String,
    pub identifier_size: u32,
    pub timestamp_ms: u64,
    pub strings: HashMap<u64, String>,
    /// Class object id to dotted class name.
    pub classes: HashMap<u64, String>,
    pub instance_counts: BTreeMap<String, u64>,
    pub diagnostics: Diagnostics,
    pub bytes_consumed: u64,
}

/// `android/media/AudioManager` and `android.media.AudioManager` both give `AudioManager`.
pub fn simple_class_name(name: &str) -> &str {
    name.rsplit(['.', '/']).next().unwrap_or(name)
}

/// Restricts instance counts to the schema's classes, matched by simple name.
///
/// Classes outside the schema go to [`RawHistogram::dropped`] under their
/// full name.
pub fn summary_to_histogram(
    summary: &HprofSummary,
    schema: &FeatureSchema,
    app_id: &str,
) -> Result<RawHistogram> {
    if schema.kind() != FeatureKind::HprofDump {
        return Err(Error::contract("heap dump histograms need an hprof schema"));
    }
    let mut h = RawHistogram::new(app_id);
    for (name, &count) in &summary.instance_counts {
        let simple = simple_class_name(name);
        if schema.contains(simple) {
            *h.counts.entry(simple.to_string()).or_default() += count;
        } else {
            *h.dropped.entry(name.clone()).or_default() += count;
        }
    }
    Ok(h)
}
