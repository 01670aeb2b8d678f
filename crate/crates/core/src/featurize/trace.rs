use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureSchema, RawHistogram};
use crate::error::{Error, Result};

/// One line of a trace log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub app: String,
    pub pid: i64,
    pub syscall: String,
}

/// Aggregates a JSON Lines syscall log into one histogram per app.
///
/// Counts are summed across pids. Syscalls outside the schema land in
/// [`RawHistogram::dropped`]. Blank lines are ignored. Histograms come back
/// sorted by app id and carry no label.
pub fn parse_trace_log<R: BufRead>(reader: R, schema: &FeatureSchema) -> Result<Vec<RawHistogram>> {
    if schema.kind() != FeatureKind::SyscallTrace {
        return Err(Error::contract("trace logs need a syscall schema"));
    }
    let mut apps: BTreeMap<String, RawHistogram> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: TraceEvent = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let h = apps
            .entry(ev.app.clone())
            .or_insert_with(|| RawHistogram::new(ev.app));
        let bucket = if schema.contains(&ev.syscall) {
            &mut h.counts
        } else {
            &mut h.dropped
        };
        *bucket.entry(ev.syscall).or_default() += 1;
    }
    Ok(apps.into_values().collect())
}
