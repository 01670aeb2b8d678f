//! Turning trace logs and heap dump directories into labeled histograms.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use spotcheck::featurize::{parse_trace_log, FeatureKind, FeatureSchema, Label, RawHistogram};
use spotcheck::hprof::{parse_hprof, summary_to_histogram};

/// Histograms keyed by app id, merged across every source that names the app.
#[derive(Default)]
pub struct Collected {
    pub apps: BTreeMap<String, RawHistogram>,
    pub sources: Vec<PathBuf>,
}

impl Collected {
    fn add(&mut self, mut h: RawHistogram, label: Label) -> Result<()> {
        h.label = Some(label);
        match self.apps.get_mut(&h.app_id) {
            Some(existing) if existing.label() != label => {
                bail!(
                    "app {:?} appears as both {} and {}",
                    h.app_id,
                    existing.label(),
                    label
                )
            }
            Some(existing) => existing.merge(&h),
            None => {
                self.apps.insert(h.app_id.clone(), h);
            }
        }
        Ok(())
    }

    pub fn collect(&mut self, path: &Path, label: Label, schema: &FeatureSchema) -> Result<()> {
        if !path.exists() {
            bail!("input {} does not exist", path.display());
        }
        match schema.kind() {
            FeatureKind::SyscallTrace => {
                for file in files_below(path)? {
                    let reader = BufReader::new(fs::File::open(&file)?);
                    let hists = parse_trace_log(reader, schema)
                        .with_context(|| format!("in {}", file.display()))?;
                    for h in hists {
                        self.add(h, label)?;
                    }
                    self.sources.push(file);
                }
            }
            FeatureKind::HprofDump if path.is_file() => {
                let h = dump_histogram(path, &app_id_of(path), schema)?;
                self.add(h, label)?;
                self.sources.push(path.to_path_buf());
            }
            FeatureKind::HprofDump => {
                for entry in sorted_entries(path)? {
                    let app = app_id_of(&entry);
                    let dumps = if entry.is_dir() {
                        files_below(&entry)?
                    } else {
                        vec![entry]
                    };
                    for dump in dumps {
                        let h = dump_histogram(&dump, &app, schema)?;
                        self.add(h, label)?;
                        self.sources.push(dump);
                    }
                }
            }
        }
        Ok(())
    }
}

fn dump_histogram(path: &Path, app: &str, schema: &FeatureSchema) -> Result<RawHistogram> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let summary = parse_hprof(BufReader::new(file))
        .with_context(|| format!("parsing heap dump {}", path.display()))?;
    let d = &summary.diagnostics;
    if d.unresolved_instances > 0 || d.skipped_records > 0 {
        log::info!(
            "{}: {} unresolved instances, {} skipped records",
            path.display(),
            d.unresolved_instances,
            d.skipped_records
        );
    }
    Ok(summary_to_histogram(&summary, schema, app)?)
}

fn app_id_of(path: &Path) -> String {
    let name = if path.is_dir() {
        path.file_name()
    } else {
        path.file_stem()
    };
    name.map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn is_hidden(path: &Path) -> bool {
    path.file_name()
        .is_some_and(|n| n.to_string_lossy().starts_with('.'))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if !is_hidden(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// The path itself if it is a file, else every non-hidden file below it.
fn files_below(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in sorted_entries(path)? {
        if entry.is_dir() {
            out.extend(files_below(&entry)?);
        } else {
            out.push(entry);
        }
    }
    Ok(out)
}
