use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use spotcheck::eval::{evaluate, export_latent, select_threshold, write_latent_csv, LatentRow};
use spotcheck::featurize::{
    gen_synth, l1_scale, read_dataset_csv, split_dataset, write_dataset_csv, write_histogram_csv,
    Dataset, FeatureKind, FeatureSchema, FeatureVector, Label, Split, SplitRatios, SynthSpec,
};
use spotcheck::kpca::fit_kpca;
use spotcheck::vae::{train_vae, vae_score, vae_scores, VaeTopology};
use spotcheck::{AnomalyRecord, Detector, Verdict};

use crate::config::RunConfig;
use crate::inputs::Collected;
use crate::manifest::Recorder;
use crate::model_io::AnyModel;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Syscall,
    Hprof,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RowsArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Benign inputs: a JSONL trace log, or a directory of heap dumps.
    #[arg(long, num_args = 1..)]
    pub benign: Vec<PathBuf>,
    /// Malicious inputs.
    #[arg(long, num_args = 1..)]
    pub malicious: Vec<PathBuf>,
    /// Unlabeled inputs.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Input kind; inferred from the schema or the inputs when omitted.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Feature schema JSON.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Tag rows train/val/test with a seeded benign-only split.
    #[arg(long)]
    pub split: bool,
    /// Output CSV (default: <out-dir>/dataset.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the unscaled per-app counts in the same layout.
    #[arg(long)]
    pub raw_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 400)]
    pub n_benign: usize,
    #[arg(long, default_value_t = 100)]
    pub n_anomalous: usize,
    /// Class separation in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Output CSV (default: <out-dir>/synth.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Split-tagged dataset CSV.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub detector: Option<DetectorArg>,
    /// KPCA latent dimension.
    #[arg(long)]
    pub r: Option<usize>,
    /// VAE configuration number, 1-6.
    #[arg(long)]
    pub topology: Option<u8>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Output model JSON (default: <out-dir>/model.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DetectorArg {
    Kpca,
    Vae,
}

impl From<DetectorArg> for Detector {
    fn from(d: DetectorArg) -> Self {
        match d {
            DetectorArg::Kpca => Detector::Kpca,
            DetectorArg::Vae => Detector::Vae,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Fixed threshold; accepts `inf` and `-inf`. Overrides the percentile rule.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Benign-validation percentile for the threshold.
    #[arg(long)]
    pub percentile: Option<f64>,
    /// Rows to score (default: test rows, or all rows of an unsplit dataset).
    #[arg(long, value_enum)]
    pub rows: Option<RowsArg>,
    /// VAE latent samples per row.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Also write 2-D latent coordinates of the scored rows.
    #[arg(long)]
    pub latent_out: Option<PathBuf>,
    /// Records CSV (default: <out-dir>/records.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LatentArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub rows: RowsArg,
    /// Output CSV (default: <out-dir>/latent.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl FeaturizeArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if self.schema.is_some() {
            cfg.schema = self.schema.clone();
        }
    }
}

impl FitArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(d) = self.detector {
            cfg.detector = d.into();
        }
        if let Some(r) = self.r {
            cfg.kpca.r = r;
        }
        if let Some(t) = self.topology {
            cfg.vae.topology = t;
        }
        if let Some(e) = self.epochs {
            cfg.vae.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.vae.batch_size = b;
        }
    }
}

impl ScoreArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(m) = &self.model {
            cfg.model = Some(m.clone());
        }
        if let Some(p) = self.percentile {
            cfg.percentile = p;
        }
        if let Some(s) = self.samples {
            cfg.vae.samples = s;
        }
    }
}

impl LatentArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(m) = &self.model {
            cfg.model = Some(m.clone());
        }
    }
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .with_context(|| format!("no {what} given; pass --{what} or set it in the config"))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Reads a dataset CSV. The header carries names but not the kind, so a
/// header matching the bundled heap-dump layout is taken as one.
fn load_dataset(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let text = fs::read(path).with_context(|| format!("reading dataset {}", path.display()))?;
    let mut ds = read_dataset_csv(text.as_slice(), FeatureKind::SyscallTrace)
        .with_context(|| format!("parsing dataset {}", path.display()))?;
    let kind = match &cfg.schema {
        Some(p) => FeatureSchema::load(p)?.kind(),
        None if ds.schema.names() == FeatureSchema::default_hprof().names() => {
            FeatureKind::HprofDump
        }
        None => FeatureKind::SyscallTrace,
    };
    ds.schema = FeatureSchema::new(kind, ds.schema.names().to_vec())?;
    Ok(ds)
}

fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    write_dataset_csv(&mut w, ds)?;
    w.flush()?;
    Ok(())
}

pub fn featurize(args: &FeaturizeArgs, cfg: &RunConfig) -> Result<()> {
    let mut rec = Recorder::start("featurize", cfg);
    let kind = match (args.kind, &cfg.schema) {
        (Some(KindArg::Syscall), _) => FeatureKind::SyscallTrace,
        (Some(KindArg::Hprof), _) => FeatureKind::HprofDump,
        (None, Some(p)) => FeatureSchema::load(p)?.kind(),
        (None, None) => {
            let any_dir = args
                .benign
                .iter()
                .chain(&args.malicious)
                .chain(&args.input)
                .any(|p| p.is_dir());
            if any_dir {
                FeatureKind::HprofDump
            } else {
                FeatureKind::SyscallTrace
            }
        }
    };
    let schema = match &cfg.schema {
        Some(p) => {
            rec.input(p)?;
            let s = FeatureSchema::load(p)
                .with_context(|| format!("loading schema {}", p.display()))?;
            if s.kind() != kind {
                bail!(
                    "schema {} is for {:?} inputs, not {:?}",
                    p.display(),
                    s.kind(),
                    kind
                );
            }
            s
        }
        None if kind == FeatureKind::HprofDump => FeatureSchema::default_hprof(),
        None => FeatureSchema::default_syscall(),
    };

    let mut collected = Collected::default();
    for (paths, label) in [
        (&args.benign, Label::Benign),
        (&args.malicious, Label::Malicious),
        (&args.input, Label::Unknown),
    ] {
        for p in paths {
            collected.collect(p, label, &schema)?;
        }
    }
    if collected.apps.is_empty() {
        bail!("no inputs: nothing to featurize");
    }
    for src in &collected.sources {
        rec.input(src)?;
    }

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut dropped: std::collections::BTreeMap<&str, u64> = Default::default();
    for h in collected.apps.values() {
        for (name, n) in &h.dropped {
            *dropped.entry(name).or_default() += n;
        }
        if h.total() == 0 {
            log::warn!("skipping {:?}: no counts over the schema", h.app_id);
            skipped.push(h.app_id.clone());
            continue;
        }
        rows.push(l1_scale(h, &schema)?);
    }
    if rows.is_empty() {
        bail!(
            "no inputs with counts over the schema ({} skipped)",
            skipped.len()
        );
    }

    if let Some(p) = &args.raw_out {
        let p = rec.output(p)?;
        let hists: Vec<_> = collected.apps.values().cloned().collect();
        let mut w = create(&p)?;
        write_histogram_csv(&mut w, &schema, &hists)?;
        w.flush()?;
    }
    let ds = if args.split {
        split_dataset(schema, rows, SplitRatios::default(), cfg.seed)?
    } else {
        Dataset::unsplit(schema, rows)?
    };
    let out = rec.output(
        &args
            .out
            .clone()
            .unwrap_or_else(|| cfg.out_dir.join("dataset.csv")),
    )?;
    write_dataset(&out, &ds)?;

    let count = |l: Label| ds.rows.iter().filter(|r| r.label == l).count();
    println!(
        "wrote {} rows x {} features to {} ({} benign, {} malicious, {} unlabeled)",
        ds.len(),
        ds.schema.dim(),
        out.display(),
        count(Label::Benign),
        count(Label::Malicious),
        count(Label::Unknown)
    );
    if !skipped.is_empty() {
        println!(
            "skipped {} app(s) with no in-schema counts: {}",
            skipped.len(),
            skipped.join(", ")
        );
    }
    if !dropped.is_empty() {
        let mut top: Vec<(&str, u64)> = dropped.into_iter().collect();
        let total: u64 = top.iter().map(|(_, n)| n).sum();
        top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let shown: Vec<String> = top
            .iter()
            .take(5)
            .map(|(k, n)| format!("{k}={n}"))
            .collect();
        println!(
            "dropped {total} observation(s) over {} unknown feature(s): {}",
            top.len(),
            shown.join(", ")
        );
    }
    rec.finish()?;
    Ok(())
}

pub fn synth(args: &SynthArgs, cfg: &RunConfig) -> Result<()> {
    let mut rec = Recorder::start("synth", cfg);
    let ds = gen_synth(SynthSpec {
        dim: args.dim,
        n_benign: args.n_benign,
        n_anomalous: args.n_anomalous,
        delta: args.delta,
        seed: cfg.seed,
    })?;
    let out = rec.output(
        &args
            .out
            .clone()
            .unwrap_or_else(|| cfg.out_dir.join("synth.csv")),
    )?;
    write_dataset(&out, &ds)?;
    println!(
        "wrote {} synthetic rows x {} features to {}",
        ds.len(),
        ds.schema.dim(),
        out.display()
    );
    rec.finish()?;
    Ok(())
}

pub fn fit(args: &FitArgs, cfg: &RunConfig) -> Result<()> {
    let mut rec = Recorder::start("fit", cfg);
    let data_path = required(&cfg.dataset, "dataset")?;
    rec.input(data_path)?;
    let ds = load_dataset(data_path, cfg)?;
    let x_train = ds.matrix(Split::Train);
    if x_train.rows() == 0 {
        bail!("dataset has no train rows; featurize with --split first");
    }
    let x_val = ds.matrix(Split::Val);
    let model_path = rec.output(
        &args
            .out
            .clone()
            .unwrap_or_else(|| cfg.out_dir.join("model.json")),
    )?;

    let model = match cfg.detector {
        Detector::Kpca => {
            let (model, search) = fit_kpca(&x_train, &cfg.kpca_config())?;
            for (g, err) in &search.candidates {
                match err {
                    Some(e) => log::info!("gamma {g:.6}: held-out mse {e:.6e}"),
                    None => log::info!("gamma {g:.6}: skipped"),
                }
            }
            println!(
                "kpca: {} train rows, r={}, gamma={:.6}, eigenvalues {:?}",
                x_train.rows(),
                model.r,
                model.gamma,
                model.eigenvalues
            );
            AnyModel::Kpca(model)
        }
        Detector::Vae => {
            let topology = VaeTopology::numbered(cfg.vae.topology, ds.schema.dim())?;
            let val = (x_val.rows() > 0).then_some(&x_val);
            let log_path = rec.output(&cfg.out_dir.join("training_log.csv"))?;
            let (model, history) = match train_vae(&x_train, val, &topology, &cfg.train_config()) {
                Ok(ok) => ok,
                Err(spotcheck::Error::Divergence {
                    epoch,
                    batch,
                    what,
                    history,
                }) => {
                    history.write_csv(create(&log_path)?)?;
                    return Err(spotcheck::Error::Divergence {
                        epoch,
                        batch,
                        what,
                        history,
                    }
                    .into());
                }
                Err(e) => return Err(e.into()),
            };
            let mut w = create(&log_path)?;
            history.write_csv(&mut w)?;
            w.flush()?;
            let last = history
                .epochs
                .last()
                .map(|e| e.train_loss)
                .unwrap_or(f64::NAN);
            println!(
                "vae: {} train rows, topology {} ({} params), final train loss {last:.6}",
                x_train.rows(),
                cfg.vae.topology,
                topology.n_params()
            );
            AnyModel::Vae(model)
        }
    };
    model.save(&model_path, &cfg.digest(), cfg.seed)?;
    println!("wrote {}", model_path.display());
    rec.finish()?;
    Ok(())
}

fn select_rows(ds: &Dataset, rows: Option<RowsArg>) -> Vec<FeatureVector> {
    let all_unassigned = ds.splits.iter().all(|s| *s == Split::Unassigned);
    let pick = |split: Split| ds.subset(split).into_iter().cloned().collect();
    match rows {
        Some(RowsArg::All) => ds.rows.clone(),
        None if all_unassigned => ds.rows.clone(),
        Some(RowsArg::Train) => pick(Split::Train),
        Some(RowsArg::Val) => pick(Split::Val),
        Some(RowsArg::Test) | None => pick(Split::Test),
    }
}

fn raw_scores(model: &AnyModel, rows: &[FeatureVector], cfg: &RunConfig) -> Result<Vec<f64>> {
    Ok(match model {
        AnyModel::Kpca(m) => rows.iter().map(|r| m.recon_error(&r.values)).collect(),
        AnyModel::Vae(m) => {
            let xs: Vec<&[f64]> = rows.iter().map(|r| r.values.as_slice()).collect();
            vae_scores(m, &xs, cfg.seed, cfg.vae.samples)?
        }
    })
}

fn score_rows(
    model: &AnyModel,
    rows: &[FeatureVector],
    alpha: f64,
    cfg: &RunConfig,
) -> Result<Vec<AnomalyRecord>> {
    Ok(match model {
        AnyModel::Kpca(m) => m.score(rows, alpha),
        AnyModel::Vae(m) => vae_score(m, rows, alpha, cfg.seed, cfg.vae.samples)?,
    })
}

fn latent_rows(model: &AnyModel, rows: &[FeatureVector]) -> Result<Vec<LatentRow>> {
    Ok(match model {
        AnyModel::Kpca(m) => export_latent(m, rows)?,
        AnyModel::Vae(m) => export_latent(m, rows)?,
    })
}

fn write_latent(path: &Path, rows: &[LatentRow]) -> Result<()> {
    let mut w = create(path)?;
    write_latent_csv(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RecordRow<'a> {
    app_id: &'a str,
    score: f64,
    verdict: &'static str,
}

fn write_records(path: &Path, records: &[AnomalyRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in records {
        w.serialize(RecordRow {
            app_id: &r.app_id,
            score: r.score,
            verdict: match r.verdict {
                Verdict::Anomaly => "anomaly",
                Verdict::Normal => "normal",
            },
        })?;
    }
    w.flush()?;
    Ok(())
}

struct Scored {
    rows: Vec<FeatureVector>,
    records: Vec<AnomalyRecord>,
    alpha: f64,
}

fn load_model_checked(path: &Path, ds: &Dataset) -> Result<AnyModel> {
    let model = AnyModel::load(path)?;
    if model.input_dim() != ds.schema.dim() {
        bail!(
            "model expects {} features but the dataset has {}",
            model.input_dim(),
            ds.schema.dim()
        );
    }
    Ok(model)
}

fn run_scoring(
    command: &'static str,
    args: &ScoreArgs,
    cfg: &RunConfig,
) -> Result<(Recorder, Scored)> {
    let mut rec = Recorder::start(command, cfg);
    let data_path = required(&cfg.dataset, "dataset")?;
    let model_path = required(&cfg.model, "model")?;
    rec.input(data_path)?;
    rec.input(model_path)?;
    let ds = load_dataset(data_path, cfg)?;
    let model = load_model_checked(model_path, &ds)?;
    let detector = model.detector();

    let alpha = match args.alpha {
        Some(a) if a.is_nan() => bail!("--alpha must not be NaN"),
        Some(a) => a,
        None => {
            let val = select_rows(&ds, Some(RowsArg::Val));
            if val.is_empty() {
                bail!("dataset has no validation rows; pass --alpha or featurize with --split");
            }
            let scores = raw_scores(&model, &val, cfg)?;
            select_threshold(&scores, cfg.percentile, detector.direction())?
        }
    };
    let rows = select_rows(&ds, args.rows);
    if rows.is_empty() {
        bail!("no rows selected for scoring");
    }
    let records = score_rows(&model, &rows, alpha, cfg)?;
    let out = rec.output(
        &args
            .out
            .clone()
            .unwrap_or_else(|| cfg.out_dir.join("records.csv")),
    )?;
    write_records(&out, &records)?;
    if let Some(p) = &args.latent_out {
        let p = rec.output(p)?;
        write_latent(&p, &latent_rows(&model, &rows)?)?;
    }
    let flagged = records
        .iter()
        .filter(|r| r.verdict == Verdict::Anomaly)
        .count();
    println!(
        "{}: scored {} rows, alpha={alpha}, {flagged} flagged; wrote {}",
        serde_json::to_string(&detector)?.trim_matches('"'),
        records.len(),
        out.display()
    );
    Ok((
        rec,
        Scored {
            rows,
            records,
            alpha,
        },
    ))
}

pub fn score(args: &ScoreArgs, cfg: &RunConfig) -> Result<()> {
    let (rec, _) = run_scoring("score", args, cfg)?;
    rec.finish()?;
    Ok(())
}

pub fn eval(args: &ScoreArgs, cfg: &RunConfig) -> Result<()> {
    let (mut rec, scored) = run_scoring("eval", args, cfg)?;
    let labels: Vec<Label> = scored.rows.iter().map(|r| r.label).collect();
    let report = evaluate(&scored.records, &labels, scored.alpha)?;
    let path = rec.output(&cfg.out_dir.join("report.json"))?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    let c = &report.confusion;
    println!(
        "auc={:.4} f1={:.4} precision={:.4} recall={:.4} (tp={} fp={} tn={} fn={})",
        report.auc_roc, report.f1, report.precision, report.recall, c.tp, c.fp, c.tn, c.fn_
    );
    rec.finish()?;
    Ok(())
}

pub fn latent_export(args: &LatentArgs, cfg: &RunConfig) -> Result<()> {
    let mut rec = Recorder::start("latent-export", cfg);
    let data_path = required(&cfg.dataset, "dataset")?;
    let model_path = required(&cfg.model, "model")?;
    rec.input(data_path)?;
    rec.input(model_path)?;
    let ds = load_dataset(data_path, cfg)?;
    let model = load_model_checked(model_path, &ds)?;
    let rows = select_rows(&ds, Some(args.rows));
    let latent = latent_rows(&model, &rows)?;
    let out = rec.output(
        &args
            .out
            .clone()
            .unwrap_or_else(|| cfg.out_dir.join("latent.csv")),
    )?;
    write_latent(&out, &latent)?;
    println!("wrote {} latent points to {}", latent.len(), out.display());
    rec.finish()?;
    Ok(())
}
