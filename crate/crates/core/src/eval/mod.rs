//! Thresholds, classification metrics and latent export.

mod latent;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::Label;
use crate::{AnomalyRecord, Detector, Verdict};

pub use latent::{export_latent, write_latent_csv, LatentModel, LatentRow};

pub const DEFAULT_PERCENTILE: f64 = 95.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsAnomalous,
    LowerIsAnomalous,
}

impl Direction {
    /// Maps a raw score so that larger always means more anomalous.
    pub fn normalize(self, score: f64) -> f64 {
        match self {
            Direction::HigherIsAnomalous => score,
            Direction::LowerIsAnomalous => -score,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::HigherIsAnomalous => Direction::LowerIsAnomalous,
            Direction::LowerIsAnomalous => Direction::HigherIsAnomalous,
        }
    }

    /// Verdict of `score` against threshold `alpha`. Equality is normal.
    pub fn verdict(self, score: f64, alpha: f64) -> Verdict {
        let anomalous = match self {
            Direction::HigherIsAnomalous => score > alpha,
            Direction::LowerIsAnomalous => score < alpha,
        };
        if anomalous {
            Verdict::Anomaly
        } else {
            Verdict::Normal
        }
    }
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// sample at or below it.
pub fn nearest_rank(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("percentile of an empty sample"));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::contract(format!("percentile {p} outside (0, 100]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::contract("NaN in percentile sample"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// Threshold from benign validation scores.
///
/// Higher-is-anomalous takes the `p`-th percentile, lower-is-anomalous the
/// `(100 - p)`-th, so in both cases roughly `100 - p` percent of benign
/// validation points land on the anomalous side.
pub fn select_threshold(val_scores: &[f64], p: f64, direction: Direction) -> Result<f64> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::contract(format!("percentile {p} outside (0, 100)")));
    }
    match direction {
        Direction::HigherIsAnomalous => nearest_rank(val_scores, p),
        Direction::LowerIsAnomalous => nearest_rank(val_scores, 100.0 - p),
    }
}

fn class_counts(labels: &[Label]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| l.is_malicious()).count();
    (pos, labels.len() - pos)
}

/// Mann–Whitney U of positives over negatives with half credit for ties,
/// computed from midranks. Returns `(U, positives, negatives)`.
pub fn mann_whitney_u(
    scores: &[f64],
    labels: &[Label],
    direction: Direction,
) -> Result<(f64, usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("NaN score"));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {pos} malicious and {neg} other"
        )));
    }
    let normalized: Vec<f64> = scores.iter().map(|&s| direction.normalize(s)).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| normalized[a].total_cmp(&normalized[b]));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && normalized[order[j + 1]] == normalized[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let midrank = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j]
            .iter()
            .filter(|&&k| labels[k].is_malicious())
            .count();
        rank_sum += midrank * tied_pos as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok((u, pos, neg))
}

/// Area under the ROC curve; malicious labels are the positive class.
pub fn roc_auc(scores: &[f64], labels: &[Label], direction: Direction) -> Result<f64> {
    let (u, pos, neg) = mann_whitney_u(scores, labels, direction)?;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Fraction of negatives flagged.
    pub fn false_positive_rate(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

/// Confusion counts and precision, recall and F1 from verdicts.
pub fn prf1(records: &[AnomalyRecord], labels: &[Label]) -> Result<Prf1> {
    if records.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: records.len(),
            right: labels.len(),
        });
    }
    let mut c = Confusion::default();
    for (rec, label) in records.iter().zip(labels) {
        match (rec.verdict == Verdict::Anomaly, label.is_malicious()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(Prf1 {
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        confusion: c,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detector: Detector,
    pub direction: Direction,
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub auc_roc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
}

/// Full report for records scored by one detector at threshold `alpha`.
pub fn evaluate(records: &[AnomalyRecord], labels: &[Label], alpha: f64) -> Result<EvalReport> {
    let detector = match records.first() {
        Some(r) => r.detector,
        None => return Err(Error::contract("no records to evaluate")),
    };
    if records.iter().any(|r| r.detector != detector) {
        return Err(Error::contract("records from more than one detector"));
    }
    let direction = detector.direction();
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let auc_roc = roc_auc(&scores, labels, direction)?;
    let m = prf1(records, labels)?;
    Ok(EvalReport {
        detector,
        direction,
        threshold: alpha,
        auc_roc,
        f1: m.f1,
        precision: m.precision,
        recall: m.recall,
        confusion: m.confusion,
    })
}

/// JSON numbers cannot hold infinities; they round-trip as `"inf"`/`"-inf"`.
pub mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse::<f64>().map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Prng;
    use proptest::prelude::*;

    fn labels(bits: &[bool]) -> Vec<Label> {
        bits.iter()
            .map(|&b| if b { Label::Malicious } else { Label::Benign })
            .collect()
    }

    fn brute_force_auc(scores: &[f64], labels: &[Label], dir: Direction) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, li) in labels.iter().enumerate() {
            if !li.is_malicious() {
                continue;
            }
            for (j, lj) in labels.iter().enumerate() {
                if lj.is_malicious() {
                    continue;
                }
                pairs += 1.0;
                let (a, b) = (dir.normalize(scores[i]), dir.normalize(scores[j]));
                if a > b {
                    credit += 1.0;
                } else if a == b {
                    credit += 0.5;
                }
            }
        }
        credit / pairs
    }

    fn record(verdict: Verdict) -> AnomalyRecord {
        AnomalyRecord {
            app_id: "a".into(),
            score: 0.0,
            verdict,
            detector: Detector::Kpca,
        }
    }

    #[test]
    fn nearest_rank_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(
            select_threshold(&v, 95.0, Direction::HigherIsAnomalous).unwrap(),
            95.0
        );
        assert_eq!(
            select_threshold(&v, 95.0, Direction::LowerIsAnomalous).unwrap(),
            5.0
        );
        assert_eq!(nearest_rank(&v, 100.0).unwrap(), 100.0);
        assert_eq!(nearest_rank(&v, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn nearest_rank_small_sample() {
        // ceil(0.95 * 7) = 7
        let v = [3.0, 1.0, 2.0, 7.0, 5.0, 4.0, 6.0];
        assert_eq!(nearest_rank(&v, 95.0).unwrap(), 7.0);
        // ceil(0.5 * 7) = 4
        assert_eq!(nearest_rank(&v, 50.0).unwrap(), 4.0);
    }

    #[test]
    fn constant_scores() {
        let v = [2.5; 17];
        assert_eq!(
            select_threshold(&v, 95.0, Direction::HigherIsAnomalous).unwrap(),
            2.5
        );
        assert_eq!(
            select_threshold(&v, 95.0, Direction::LowerIsAnomalous).unwrap(),
            2.5
        );
    }

    #[test]
    fn threshold_errors() {
        assert!(select_threshold(&[], 95.0, Direction::HigherIsAnomalous).is_err());
        assert!(select_threshold(&[1.0], 100.0, Direction::HigherIsAnomalous).is_err());
        assert!(select_threshold(&[1.0], 0.0, Direction::HigherIsAnomalous).is_err());
        assert!(select_threshold(&[f64::NAN], 50.0, Direction::HigherIsAnomalous).is_err());
    }

    #[test]
    fn flagged_fraction_near_five_percent() {
        let mut rng = Prng::new(11);
        let val: Vec<f64> = (0..10_000).map(|_| rng.next_gaussian()).collect();
        let fresh: Vec<f64> = (0..10_000).map(|_| rng.next_gaussian()).collect();
        for dir in [Direction::HigherIsAnomalous, Direction::LowerIsAnomalous] {
            let a = select_threshold(&val, 95.0, dir).unwrap();
            let flagged = fresh
                .iter()
                .filter(|&&s| dir.verdict(s, a) == Verdict::Anomaly)
                .count() as f64
                / fresh.len() as f64;
            assert!((flagged - 0.05).abs() <= 0.02, "{dir:?}: {flagged}");
        }
    }

    #[test]
    fn verdict_extremes() {
        for s in [-1e300, 0.0, 1e300] {
            assert_eq!(
                Direction::HigherIsAnomalous.verdict(s, f64::INFINITY),
                Verdict::Normal
            );
            assert_eq!(
                Direction::HigherIsAnomalous.verdict(s, f64::NEG_INFINITY),
                Verdict::Anomaly
            );
            assert_eq!(
                Direction::LowerIsAnomalous.verdict(s, f64::NEG_INFINITY),
                Verdict::Normal
            );
            assert_eq!(
                Direction::LowerIsAnomalous.verdict(s, f64::INFINITY),
                Verdict::Anomaly
            );
        }
    }

    #[test]
    fn auc_perfect_and_tied() {
        let l = labels(&[false, false, true, true]);
        let s = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(roc_auc(&s, &l, Direction::HigherIsAnomalous).unwrap(), 1.0);
        assert_eq!(roc_auc(&s, &l, Direction::LowerIsAnomalous).unwrap(), 0.0);
        assert_eq!(
            roc_auc(&[3.0; 4], &l, Direction::HigherIsAnomalous).unwrap(),
            0.5
        );
    }

    #[test]
    fn auc_single_class_is_undefined() {
        let l = labels(&[false, false]);
        assert!(matches!(
            roc_auc(&[1.0, 2.0], &l, Direction::HigherIsAnomalous),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(roc_auc(
            &[1.0],
            &labels(&[true, false]),
            Direction::HigherIsAnomalous
        )
        .is_err());
    }

    #[test]
    fn auc_matches_pair_count_with_ties() {
        let mut rng = Prng::new(5);
        let s: Vec<f64> = (0..200).map(|_| rng.below(20) as f64).collect();
        let l: Vec<Label> = labels(&(0..200).map(|_| rng.below(3) == 0).collect::<Vec<_>>());
        for dir in [Direction::HigherIsAnomalous, Direction::LowerIsAnomalous] {
            assert_eq!(roc_auc(&s, &l, dir).unwrap(), brute_force_auc(&s, &l, dir));
        }
    }

    #[test]
    fn prf1_examples() {
        let recs = [
            record(Verdict::Anomaly),
            record(Verdict::Anomaly),
            record(Verdict::Normal),
        ];
        let m = prf1(&recs, &labels(&[true, false, false])).unwrap();
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            m.confusion,
            Confusion {
                tp: 1,
                fp: 1,
                tn: 1,
                fn_: 0
            }
        );

        let none = [record(Verdict::Normal), record(Verdict::Normal)];
        let m = prf1(&none, &labels(&[true, false])).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));

        assert!(matches!(
            prf1(&none, &labels(&[true])),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn report_json_names_and_infinite_threshold() {
        let recs = vec![
            AnomalyRecord {
                app_id: "a".into(),
                score: 1.0,
                verdict: Verdict::Anomaly,
                detector: Detector::Vae,
            },
            AnomalyRecord {
                app_id: "b".into(),
                score: 2.0,
                verdict: Verdict::Anomaly,
                detector: Detector::Vae,
            },
        ];
        let rep = evaluate(&recs, &labels(&[true, false]), f64::INFINITY).unwrap();
        assert_eq!(rep.auc_roc, 1.0);
        assert_eq!(rep.direction, Direction::LowerIsAnomalous);
        let text = serde_json::to_string(&rep).unwrap();
        assert!(text.contains(r#""threshold":"inf""#));
        assert!(text.contains(r#""direction":"lower_is_anomalous""#));
        assert!(text.contains(r#""fn":0"#));
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rep);
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec(-50i32..50, n)
                    .prop_map(|v| v.into_iter().map(f64::from).collect()),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_equals_brute_force((s, bits) in scored()) {
            let l = labels(&bits);
            prop_assume!(bits.iter().any(|&b| b) && bits.iter().any(|&b| !b));
            prop_assert_eq!(
                roc_auc(&s, &l, Direction::HigherIsAnomalous).unwrap(),
                brute_force_auc(&s, &l, Direction::HigherIsAnomalous)
            );
        }

        #[test]
        fn auc_invariant_under_monotone_map((s, bits) in scored()) {
            let l = labels(&bits);
            prop_assume!(bits.iter().any(|&b| b) && bits.iter().any(|&b| !b));
            let mapped: Vec<f64> = s.iter().map(|v| (v / 10.0).exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(
                roc_auc(&s, &l, Direction::HigherIsAnomalous).unwrap(),
                roc_auc(&mapped, &l, Direction::HigherIsAnomalous).unwrap()
            );
        }

        #[test]
        fn flipping_direction_complements_u((s, bits) in scored()) {
            let l = labels(&bits);
            prop_assume!(bits.iter().any(|&b| b) && bits.iter().any(|&b| !b));
            let (u, p, n) = mann_whitney_u(&s, &l, Direction::HigherIsAnomalous).unwrap();
            let (v, _, _) = mann_whitney_u(&s, &l, Direction::LowerIsAnomalous).unwrap();
            prop_assert_eq!(u + v, (p * n) as f64);
            let a = roc_auc(&s, &l, Direction::HigherIsAnomalous).unwrap();
            let b = roc_auc(&s, &l, Direction::LowerIsAnomalous).unwrap();
            prop_assert!((a - (1.0 - b)).abs() <= f64::EPSILON);
        }

        #[test]
        fn confusion_matches_scripted_count(
            cases in prop::collection::vec((any::<bool>(), any::<bool>()), 0..80)
        ) {
            let recs: Vec<AnomalyRecord> = cases
                .iter()
                .map(|&(v, _)| record(if v { Verdict::Anomaly } else { Verdict::Normal }))
                .collect();
            let l = labels(&cases.iter().map(|&(_, y)| y).collect::<Vec<_>>());
            let m = prf1(&recs, &l).unwrap();
            let count = |pv: bool, py: bool| cases.iter().filter(|&&(v, y)| v == pv && y == py).count() as u64;
            prop_assert_eq!(m.confusion.tp, count(true, true));
            prop_assert_eq!(m.confusion.fp, count(true, false));
            prop_assert_eq!(m.confusion.tn, count(false, false));
            prop_assert_eq!(m.confusion.fn_, count(false, true));
            prop_assert_eq!(m.confusion.total(), cases.len() as u64);
            for v in [m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn threshold_monotone_in_p(
            v in prop::collection::vec(-1e3f64..1e3, 1..100),
            p in 1.0f64..98.0,
            dp in 0.0f64..1.0
        ) {
            let a = select_threshold(&v, p, Direction::HigherIsAnomalous).unwrap();
            let b = select_threshold(&v, p + dp, Direction::HigherIsAnomalous).unwrap();
            prop_assert!(a <= b);
        }
    }
}
