use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance record written next to a command's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub wall_time_secs: f64,
}

pub struct Recorder {
    command: &'static str,
    config: RunConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
    started: SystemTime,
    clock: Instant,
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl Recorder {
    pub fn start(command: &'static str, config: &RunConfig) -> Self {
        Recorder {
            command,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    /// Digests a file, or every file below a directory in sorted order.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            entries.sort();
            for e in entries {
                self.input(&e)?;
            }
        } else {
            let sha256 = sha256_file(path)?;
            self.inputs.push(FileDigest {
                path: path.to_path_buf(),
                sha256,
            });
        }
        Ok(())
    }

    /// Registers an output path, refusing to overwrite any recorded input.
    pub fn output(&mut self, path: &Path) -> Result<PathBuf> {
        let canon = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
        if self.inputs.iter().any(|i| canon(&i.path) == canon(path)) {
            bail!("refusing to overwrite input file {}", path.display());
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        self.outputs.push(path.to_path_buf());
        Ok(path.to_path_buf())
    }

    pub fn finish(self) -> Result<PathBuf> {
        let path = self
            .config
            .out_dir
            .join(format!("{}.manifest.json", self.command));
        fs::create_dir_all(&self.config.out_dir)?;
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.config.seed,
            config_sha256: self.config.digest(),
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix: self
                .started
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_time_secs: self.clock.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
