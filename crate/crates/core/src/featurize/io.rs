//! Dataset CSV: `app_id,label,split,<feature names...>`.
//!
//! Values are written with Rust's shortest round-trip decimal formatting, so
//! reading a file back reproduces every `f64` bit for bit.

use std::io::{Read, Write};

use super::{Dataset, FeatureKind, FeatureSchema, FeatureVector, Label, RawHistogram, Split};
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 3] = ["app_id", "label", "split"];

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

fn header(schema: &FeatureSchema) -> Vec<&str> {
    FIXED_COLUMNS
        .iter()
        .copied()
        .chain(schema.names().iter().map(String::as_str))
        .collect()
}

pub fn write_dataset_csv<W: Write>(w: W, ds: &Dataset) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header(&ds.schema)).map_err(csv_err)?;
    for (row, split) in ds.rows.iter().zip(&ds.splits) {
        let mut rec = vec![row.app_id.clone(), row.label.to_string(), split.to_string()];
        rec.extend(row.values.iter().map(|v| v.to_string()));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Raw (unscaled) counts in the dataset layout, split column `-`.
pub fn write_histogram_csv<W: Write>(
    w: W,
    schema: &FeatureSchema,
    hists: &[RawHistogram],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header(schema)).map_err(csv_err)?;
    for h in hists {
        let mut rec = vec![h.app_id.clone(), h.label().to_string(), "-".to_string()];
        rec.extend(
            schema
                .names()
                .iter()
                .map(|n| h.counts.get(n).copied().unwrap_or(0).to_string()),
        );
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset CSV. Feature names come from the header; `kind` labels the
/// resulting schema.
pub fn read_dataset_csv<R: Read>(r: R, kind: FeatureKind) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(r);
    let hdr = rdr.headers().map_err(csv_err)?.clone();
    if hdr.len() < FIXED_COLUMNS.len() || hdr.iter().take(3).ne(FIXED_COLUMNS) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header must start with {}", FIXED_COLUMNS.join(",")),
        });
    }
    let names: Vec<String> = hdr.iter().skip(3).map(String::from).collect();
    let schema = FeatureSchema::new(kind, names)?;
    let mut rows = Vec::new();
    let mut splits = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::Parse { line, msg };
        let label: Label = rec[1].parse().map_err(bad)?;
        let split: Split = rec[2].parse().map_err(bad)?;
        let values = rec
            .iter()
            .skip(3)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| bad(format!("value {v:?}: {e}")))
                    .and_then(|x| {
                        if x.is_finite() && x >= 0.0 {
                            Ok(x)
                        } else {
                            Err(bad(format!("value {v:?} must be finite and non-negative")))
                        }
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureVector {
            app_id: rec[0].to_string(),
            label,
            values,
        });
        splits.push(split);
    }
    let ds = Dataset {
        schema,
        rows,
        splits,
    };
    ds.validate()?;
    Ok(ds)
}
