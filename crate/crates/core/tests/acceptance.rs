//! Acceptance gate. Prints one line per criterion and exits non-zero if any
//! binding criterion fails.
//!
//! Criteria 9 to 11 compare against published results and need the external
//! datasets: set `SPOTCHECK_SYSCALL_CSV` and/or `SPOTCHECK_HPROF_CSV` to
//! dataset CSVs (as written by `spotcheck featurize --split`). They are
//! reported but never fail the run.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use spotcheck::eval::{roc_auc, select_threshold, Direction};
use spotcheck::featurize::{
    gen_synth, read_dataset_csv, Dataset, FeatureKind, Label, Split, SynthSpec,
};
use spotcheck::hprof::parse_hprof;
use spotcheck::hprof::writer::FixtureSpec;
use spotcheck::kpca::{centered_gram, fit_kpca, KpcaConfig};
use spotcheck::numerics::{sym_eig, Matrix, Prng};
use spotcheck::vae::{
    init_vae, kl_divergence, loss_with_noise, train_vae, vae_scores, LossMode, TrainConfig,
    VaeTopology, DEFAULT_SCORE_SAMPLES,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn labels_of(rows: &[&spotcheck::featurize::FeatureVector]) -> Vec<Label> {
    rows.iter().map(|r| r.label).collect()
}

fn simplex_rows(n: usize, dim: usize, rng: &mut Prng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.next_f64() + 0.05).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (mode, seed) in [(LossMode::Nll, 101), (LossMode::Mse, 202)] {
        let t = VaeTopology::new(6, vec![4], 2, mode).unwrap();
        let mut model = init_vae(&t, seed).unwrap();
        let mut rng = Prng::new(seed + 1);
        let rows = simplex_rows(5, 6, &mut rng);
        let batch: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let eps: Vec<f64> = (0..10).map(|_| rng.next_gaussian()).collect();
        let (_, g) = loss_with_noise(&model, &batch, &eps, 1, true).unwrap();
        let h = 1e-5;
        for i in 0..g.len() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + h;
            let up = loss_with_noise(&model, &batch, &eps, 1, false).unwrap().0;
            model.params_mut()[i] = orig - h;
            let down = loss_with_noise(&model, &batch, &eps, 1, false).unwrap().0;
            model.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = if g[i] == fd {
                0.0
            } else {
                (g[i] - fd).abs() / g[i].abs().max(fd.abs())
            };
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-4 && elapsed < Duration::from_secs(10),
        format!(
            "{checked} parameters, max relative error {worst:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn kl_oracle() -> Outcome {
    let mut rng = Prng::new(2024);
    let d = 2;
    let mut worst_rel: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..50 {
        let mu: Vec<f64> = (0..d).map(|_| 2.0 * rng.next_gaussian()).collect();
        let var: Vec<f64> = (0..d).map(|_| (rng.next_f64() * 4.0 - 2.0).exp()).collect();
        let log_var: Vec<f64> = var.iter().map(|v| v.ln()).collect();
        let closed = kl_divergence(&mu, &log_var);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut log_q = 0.0;
            let mut log_p = 0.0;
            for j in 0..d {
                let z = mu[j] + var[j].sqrt() * rng.next_gaussian();
                log_q += -0.5 * (2.0 * std::f64::consts::PI * var[j]).ln()
                    - (z - mu[j]).powi(2) / (2.0 * var[j]);
                log_p += -0.5 * (2.0 * std::f64::consts::PI).ln() - z * z / 2.0;
            }
            acc += log_q - log_p;
        }
        let mc = acc / n as f64;
        let abs = (closed - mc).abs();
        let rel = abs / closed.abs();
        if !(rel <= 0.02 || abs <= 0.01) {
            failures += 1;
        }
        worst_rel = worst_rel.max(rel.min(abs / 0.01 * 0.02));
    }
    outcome(
        failures == 0,
        format!("50 pairs, {failures} outside tolerance"),
    )
}

fn eigen_check() -> Outcome {
    let mut rng = Prng::new(77);
    let n = 20;
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = rng.next_f64() * 2.0 - 1.0;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let e = sym_eig(&a).unwrap();
    let mut recon: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..n)
                .map(|k| e.vectors[(i, k)] * e.values[k] * e.vectors[(j, k)])
                .sum();
            recon = recon.max((v - a[(i, j)]).abs());
        }
    }
    let trace = (e.values.iter().sum::<f64>() - a.trace()).abs();
    outcome(
        recon <= 1e-8 && trace <= 1e-8,
        format!("max reconstruction error {recon:.2e}, trace error {trace:.2e}"),
    )
}

fn synth(delta: f64) -> Dataset {
    gen_synth(SynthSpec {
        dim: 32,
        n_benign: 400,
        n_anomalous: 100,
        delta,
        seed: 7,
    })
    .unwrap()
}

fn kpca_centering() -> Outcome {
    let ds = synth(1.0);
    let x = ds.matrix(Split::Train);
    let (model, _) = fit_kpca(
        &x,
        &KpcaConfig {
            seed: 7,
            ..KpcaConfig::default()
        },
    )
    .unwrap();
    let (kc, _) = centered_gram(&x, model.gamma);
    let m = kc.rows();
    let mut sums: f64 = 0.0;
    for i in 0..m {
        let row: f64 = (0..m).map(|j| kc[(i, j)]).sum();
        let col: f64 = (0..m).map(|j| kc[(j, i)]).sum();
        sums = sums.max(row.abs()).max(col.abs());
    }
    let mut transform: f64 = 0.0;
    for i in 0..m {
        let z = model.transform(x.row(i));
        for c in 0..model.r {
            transform = transform.max((z[c] - model.training_latents()[(i, c)]).abs());
        }
    }
    outcome(
        sums <= 1e-9 && transform <= 1e-8,
        format!("max row/column sum {sums:.2e}, transform deviation {transform:.2e}"),
    )
}

struct DetectorRun {
    auc: f64,
    fpr: f64,
    elapsed: Duration,
}

fn test_labels_and_fpr(
    ds: &Dataset,
    test_scores: &[f64],
    alpha: f64,
    dir: Direction,
) -> (f64, f64) {
    let test = ds.subset(Split::Test);
    let labels = labels_of(&test);
    let auc = roc_auc(test_scores, &labels, dir).unwrap();
    let benign: Vec<f64> = test_scores
        .iter()
        .zip(&labels)
        .filter(|(_, l)| !l.is_malicious())
        .map(|(s, _)| *s)
        .collect();
    let flagged = benign
        .iter()
        .filter(|&&s| dir.normalize(s) > dir.normalize(alpha))
        .count();
    (auc, flagged as f64 / benign.len() as f64)
}

fn run_kpca(ds: &Dataset) -> DetectorRun {
    let start = Instant::now();
    let (model, _) = fit_kpca(
        &ds.matrix(Split::Train),
        &KpcaConfig {
            seed: 7,
            ..KpcaConfig::default()
        },
    )
    .unwrap();
    let score = |split| -> Vec<f64> {
        ds.matrix(split)
            .row_iter()
            .map(|x| model.recon_error(x))
            .collect()
    };
    let val = score(Split::Val);
    let test = score(Split::Test);
    let elapsed = start.elapsed();
    let alpha = select_threshold(&val, 95.0, Direction::HigherIsAnomalous).unwrap();
    let (auc, fpr) = test_labels_and_fpr(ds, &test, alpha, Direction::HigherIsAnomalous);
    DetectorRun { auc, fpr, elapsed }
}

fn run_vae(ds: &Dataset) -> DetectorRun {
    let start = Instant::now();
    let topology = VaeTopology::numbered(3, 32).unwrap();
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let (model, _) = train_vae(
        &ds.matrix(Split::Train),
        Some(&ds.matrix(Split::Val)),
        &topology,
        &cfg,
    )
    .unwrap();
    let score = |split| -> Vec<f64> {
        let x = ds.matrix(split);
        let rows: Vec<&[f64]> = x.row_iter().collect();
        vae_scores(&model, &rows, 7, DEFAULT_SCORE_SAMPLES).unwrap()
    };
    let val = score(Split::Val);
    let test = score(Split::Test);
    let elapsed = start.elapsed();
    let alpha = select_threshold(&val, 95.0, Direction::LowerIsAnomalous).unwrap();
    let (auc, fpr) = test_labels_and_fpr(ds, &test, alpha, Direction::LowerIsAnomalous);
    DetectorRun { auc, fpr, elapsed }
}

fn separation_and_calibration() -> (Outcome, Outcome) {
    let (signal, control) = (synth(1.0), synth(0.0));
    let runs = std::thread::scope(|s| {
        let k1 = s.spawn(|| run_kpca(&signal));
        let v1 = s.spawn(|| run_vae(&signal));
        let k0 = s.spawn(|| run_kpca(&control));
        let v0 = s.spawn(|| run_vae(&control));
        [k1, v1, k0, v0].map(|h| h.join().expect("detector run panicked"))
    });
    let [k1, v1, k0, v0] = runs;
    let budget = Duration::from_secs(300);
    let near_half = |a: f64| (a - 0.5).abs() <= 0.07;
    let sep = outcome(
        k1.auc >= 0.95
            && v1.auc >= 0.90
            && k1.elapsed < budget
            && v1.elapsed < budget
            && near_half(k0.auc)
            && near_half(v0.auc),
        format!(
            "delta=1: KPCA AUC {:.4} ({:.1}s), VAE AUC {:.4} ({:.1}s); delta=0: KPCA AUC {:.4}, VAE AUC {:.4}",
            k1.auc,
            k1.elapsed.as_secs_f64(),
            v1.auc,
            v1.elapsed.as_secs_f64(),
            k0.auc,
            v0.auc
        ),
    );
    let in_band = |f: f64| (0.01..=0.12).contains(&f);
    let cal = outcome(
        in_band(k1.fpr) && in_band(v1.fpr),
        format!(
            "benign test FPR at p95: KPCA {:.4}, VAE {:.4}",
            k1.fpr, v1.fpr
        ),
    );
    (sep, cal)
}

fn auc_oracle() -> Outcome {
    let mut rng = Prng::new(4242);
    let scores: Vec<f64> = (0..200).map(|_| (rng.below(25) as f64) * 0.5).collect();
    let labels: Vec<Label> = (0..200)
        .map(|_| {
            if rng.below(3) == 0 {
                Label::Malicious
            } else {
                Label::Benign
            }
        })
        .collect();
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if li.is_malicious() && !lj.is_malicious() {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    credit += 1.0;
                } else if scores[i] == scores[j] {
                    credit += 0.5;
                }
            }
        }
    }
    let brute = credit / pairs;
    let ranked = roc_auc(&scores, &labels, Direction::HigherIsAnomalous).unwrap();
    outcome(
        ranked == brute,
        format!("rank AUC {ranked} vs pair count {brute}"),
    )
}

fn hprof_round_trip() -> Outcome {
    let classes = vec![
        ("android.media.AudioManager".to_string(), 3),
        ("android.telephony.TelephonyManager".to_string(), 11),
        ("android.app.ActivityManager".to_string(), 1),
        ("android.view.inputmethod.InputMethodManager".to_string(), 6),
        ("java.lang.String".to_string(), 40),
        ("android.os.Vibrator".to_string(), 0),
    ];
    let mut fixtures = 0;
    let mut bad = Vec::new();
    for id_size in [4, 8] {
        for segments in [1, 2, 5] {
            for internal_names in [false, true] {
                for seed in 0..4 {
                    let spec = FixtureSpec {
                        id_size,
                        classes: classes.clone(),
                        segments,
                        internal_names,
                    };
                    let (bytes, manifest) = spec.generate(seed);
                    fixtures += 1;
                    match parse_hprof(&bytes[..]) {
                        Ok(s)
                            if s.instance_counts == manifest
                                && s.bytes_consumed == bytes.len() as u64 => {}
                        Ok(_) => {
                            bad.push(format!("id{id_size}/seg{segments}/seed{seed}: mismatch"))
                        }
                        Err(e) => bad.push(format!("id{id_size}/seg{segments}/seed{seed}: {e}")),
                    }
                }
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("{fixtures} fixtures, {} failures {bad:?}", bad.len()),
    )
}

fn load(var: &str, kind: FeatureKind) -> Option<Dataset> {
    let path = std::env::var_os(var)?;
    let file = std::fs::File::open(Path::new(&path)).ok()?;
    read_dataset_csv(file, kind).ok()
}

struct Sweep {
    auc: f64,
    /// `(percentile, f1, precision, recall)`
    points: Vec<(f64, f64, f64, f64)>,
}

fn prf(scores: &[f64], labels: &[Label], alpha: f64, dir: Direction) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for (s, l) in scores.iter().zip(labels) {
        let flagged = dir.normalize(*s) > dir.normalize(alpha);
        match (flagged, l.is_malicious()) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            _ => {}
        }
    }
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fneg > 0.0 {
        tp / (tp + fneg)
    } else {
        0.0
    };
    let f = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    (f, p, r)
}

fn sweep(val: &[f64], test: &[f64], labels: &[Label], dir: Direction) -> Sweep {
    let auc = roc_auc(test, labels, dir).unwrap();
    let points = [90.0, 95.0, 99.0]
        .iter()
        .map(|&p| {
            let alpha = select_threshold(val, p, dir).unwrap();
            let (f, pr, r) = prf(test, labels, alpha, dir);
            (p, f, pr, r)
        })
        .collect();
    Sweep { auc, points }
}

fn kpca_sweep(ds: &Dataset) -> Sweep {
    let (model, _) = fit_kpca(&ds.matrix(Split::Train), &KpcaConfig::default()).unwrap();
    let score = |split| -> Vec<f64> {
        ds.matrix(split)
            .row_iter()
            .map(|x| model.recon_error(x))
            .collect()
    };
    sweep(
        &score(Split::Val),
        &score(Split::Test),
        &labels_of(&ds.subset(Split::Test)),
        Direction::HigherIsAnomalous,
    )
}

fn vae_sweep(ds: &Dataset, config: u8) -> Sweep {
    let topology = VaeTopology::numbered(config, ds.schema.dim()).unwrap();
    let (model, _) = train_vae(
        &ds.matrix(Split::Train),
        Some(&ds.matrix(Split::Val)),
        &topology,
        &TrainConfig::default(),
    )
    .unwrap();
    let score = |split| -> Vec<f64> {
        let x = ds.matrix(split);
        let rows: Vec<&[f64]> = x.row_iter().collect();
        vae_scores(&model, &rows, 0, DEFAULT_SCORE_SAMPLES).unwrap()
    };
    sweep(
        &score(Split::Val),
        &score(Split::Test),
        &labels_of(&ds.subset(Split::Test)),
        Direction::LowerIsAnomalous,
    )
}

fn near(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn prf_target(s: &Sweep, f1: f64, precision: f64, recall: f64) -> bool {
    s.points
        .iter()
        .any(|&(_, f, p, r)| near(f, f1, 0.05) && near(p, precision, 0.05) && near(r, recall, 0.05))
}

fn soft_kpca_syscall() -> Option<Outcome> {
    let ds = load("SPOTCHECK_SYSCALL_CSV", FeatureKind::SyscallTrace)?;
    let s = kpca_sweep(&ds);
    Some(outcome(
        near(s.auc, 0.708, 0.05) && prf_target(&s, 0.864, 0.766, 0.99),
        format!(
            "AUC {:.4}, sweep (p, f1, precision, recall) {:?}",
            s.auc, s.points
        ),
    ))
}

fn soft_kpca_hprof() -> Option<Outcome> {
    let ds = load("SPOTCHECK_HPROF_CSV", FeatureKind::HprofDump)?;
    let s = kpca_sweep(&ds);
    Some(outcome(
        prf_target(&s, 0.88, 0.80, 0.97),
        format!("sweep (p, f1, precision, recall) {:?}", s.points),
    ))
}

fn soft_vae() -> Option<Outcome> {
    let syscall = load("SPOTCHECK_SYSCALL_CSV", FeatureKind::SyscallTrace);
    let hprof = load("SPOTCHECK_HPROF_CSV", FeatureKind::HprofDump);
    if syscall.is_none() && hprof.is_none() {
        return None;
    }
    let mut pass = true;
    let mut detail = Vec::new();
    if let Some(ds) = syscall {
        for config in 1..=6 {
            let s = vae_sweep(&ds, config);
            pass &= s.auc >= 0.692 - 0.05 && s.auc <= 0.708 + 0.05;
            detail.push(format!("syscall config {config} AUC {:.4}", s.auc));
        }
    }
    if let Some(ds) = hprof {
        for config in 1..=6 {
            let s = vae_sweep(&ds, config);
            let recall = s.points[1].3;
            pass &= (0.81 - 0.07..=0.90 + 0.07).contains(&recall);
            detail.push(format!("hprof config {config} recall@p95 {recall:.4}"));
        }
    }
    Some(outcome(pass, detail.join("; ")))
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())
    })
}

fn report(id: u8, name: &str, result: Result<Outcome, String>) -> bool {
    match result {
        Ok(o) => {
            println!(
                "criterion {id:>2} [{}] {name}: {}",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            o.pass
        }
        Err(msg) => {
            println!("criterion {id:>2} [FAIL] {name}: panicked: {msg}");
            false
        }
    }
}

fn main() {
    // Respect `cargo test -- --list` and similar harness probes.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut ok = true;
    ok &= report(
        1,
        "VAE gradients vs central differences",
        guarded(gradient_check),
    );
    ok &= report(2, "closed-form KL vs Monte Carlo", guarded(kl_oracle));
    ok &= report(3, "symmetric eigendecomposition", guarded(eigen_check));
    ok &= report(4, "KPCA centering and transform", guarded(kpca_centering));
    match guarded(separation_and_calibration) {
        Ok((sep, cal)) => {
            ok &= report(5, "synthetic separation", Ok(sep));
            ok &= report(6, "threshold calibration", Ok(cal));
        }
        Err(msg) => {
            ok &= report(5, "synthetic separation", Err(msg.clone()));
            ok &= report(6, "threshold calibration", Err(msg));
        }
    }
    ok &= report(7, "rank AUC vs pair counting", guarded(auc_oracle));
    ok &= report(8, "HPROF fixture round trip", guarded(hprof_round_trip));

    let soft: [(u8, &str, fn() -> Option<Outcome>); 3] = [
        (9, "KPCA on syscall dataset (soft)", soft_kpca_syscall),
        (10, "KPCA on HPROF dataset (soft)", soft_kpca_hprof),
        (11, "VAE on published datasets (soft)", soft_vae),
    ];
    for (id, name, f) in soft {
        match guarded(f) {
            Ok(None) => println!("criterion {id:>2} [SKIP] {name}: dataset not supplied"),
            Ok(Some(o)) => println!(
                "criterion {id:>2} [{}] {name}: {}",
                if o.pass { "PASS" } else { "MISS" },
                o.detail
            ),
            Err(msg) => println!("criterion {id:>2} [MISS] {name}: panicked: {msg}"),
        }
    }

    if !ok {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all binding criteria passed");
}
