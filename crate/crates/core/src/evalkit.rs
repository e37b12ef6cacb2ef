//! Detection metrics, ROC sweeps and false-alarm calibration.
//!
//! Scores are pooled over users and samples; a decision is "active" when the
//! score is strictly greater than the threshold.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scenario::Activity;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `TP / (TP + FN)`; NaN without positives.
    pub fn recall(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    /// `FP / (FP + TN)`; NaN without negatives.
    pub fn false_alarm(&self) -> f64 {
        self.fp as f64 / (self.fp + self.tn) as f64
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

fn check_scores(scores: &[f64], labels: usize) -> Result<()> {
    if scores.len() != labels {
        return Err(Error::Structural(format!(
            "{} scores for {labels} labels",
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("scores must not be NaN".into()));
    }
    Ok(())
}

/// Counts for one frame.
pub fn confusion(scores: &[f64], truth: &Activity, thr: f64) -> Result<ConfusionCounts> {
    confusion_pooled(scores, &truth.0, thr)
}

/// Counts over a flat list of decisions.
pub fn confusion_pooled(scores: &[f64], labels: &[bool], thr: f64) -> Result<ConfusionCounts> {
    check_scores(scores, labels.len())?;
    let mut c = ConfusionCounts::default();
    for (&s, &a) in scores.iter().zip(labels) {
        match (s > thr, a) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fa: f64,
    pub recall: f64,
}

/// Operating points ordered by increasing threshold. The first point uses
/// threshold `-inf` (everything declared active), then one point per distinct
/// score.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: u64,
    pub negatives: u64,
}

impl RocCurve {
    /// `threshold,fa,recall` rows followed by a `# auc=` line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fa,recall\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.fa, p.recall);
        }
        let _ = writeln!(out, "# auc={}", self.auc);
        out
    }

    /// Recall at the largest false-alarm rate not exceeding `fa`.
    pub fn recall_at_fa(&self, fa: f64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.fa <= fa)
            .map(|p| p.recall)
            .fold(0.0, f64::max)
    }
}

/// Trapezoidal area under the (FA, R) polyline.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[0].fa - w[1].fa).abs() * (w[0].recall + w[1].recall) / 2.0)
        .sum()
}

pub fn roc_sweep(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    check_scores(scores, labels.len())?;
    let positives = labels.iter().filter(|a| **a).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Calibration(format!(
            "ROC needs both classes, got {positives} positive and {negatives} negative labels"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![RocPoint {
        threshold: f64::NEG_INFINITY,
        fa: 1.0,
        recall: 1.0,
    }];
    // Walking upward, each group of tied scores flips to "inactive" together.
    let (mut tp, mut fp) = (positives, negatives);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp -= 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fa: fp as f64 / n,
            recall: tp as f64 / p,
        });
    }
    let auc = auc(&points);
    Ok(RocCurve {
        points,
        auc,
        positives,
        negatives,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub target_fa: f64,
    pub achieved_fa: f64,
    pub recall: f64,
    /// Set when no threshold reaches the target; the largest threshold is used.
    pub unreachable: bool,
}

/// Smallest threshold on the curve whose empirical FA is at most `target_fa`.
pub fn threshold_for_fa(curve: &RocCurve, target_fa: f64) -> Result<Calibration> {
    if target_fa.is_nan() {
        return Err(Error::Domain("target false-alarm rate must not be NaN".into()));
    }
    let last = curve
        .points
        .last()
        .ok_or_else(|| Error::Calibration("empty ROC curve".into()))?;
    let (point, unreachable) = match curve.points.iter().find(|p| p.fa <= target_fa) {
        Some(p) => (p, false),
        None => {
            log::warn!(
                "false-alarm target {target_fa} unreachable; smallest achievable is {}",
                last.fa
            );
            (last, true)
        }
    };
    Ok(Calibration {
        threshold: point.threshold,
        target_fa,
        achieved_fa: point.fa,
        recall: point.recall,
        unreachable,
    })
}

/// Calibrate on one split of pooled decisions.
pub fn calibrate(scores: &[f64], labels: &[bool], target_fa: f64) -> Result<Calibration> {
    threshold_for_fa(&roc_sweep(scores, labels)?, target_fa)
}

/// Outcome of applying one threshold to an evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub calibration: Option<Calibration>,
    pub counts: ConfusionCounts,
}

impl EvalReport {
    pub fn new(scores: &[f64], labels: &[bool], threshold: f64, calibration: Option<Calibration>) -> Result<Self> {
        Ok(Self {
            threshold,
            calibration,
            counts: confusion_pooled(scores, labels, threshold)?,
        })
    }

    pub fn recall(&self) -> f64 {
        self.counts.recall()
    }

    pub fn false_alarm(&self) -> f64 {
        self.counts.false_alarm()
    }

    pub fn to_text(&self) -> String {
        let c = &self.counts;
        let mut out = String::new();
        let _ = writeln!(out, "threshold      {}", self.threshold);
        if let Some(cal) = &self.calibration {
            let _ = writeln!(
                out,
                "calibration    target_fa={} achieved_fa={}{}",
                cal.target_fa,
                cal.achieved_fa,
                if cal.unreachable { " (target unreachable)" } else { "" }
            );
        }
        let _ = writeln!(out, "recall         {}", self.recall());
        let _ = writeln!(out, "false_alarm    {}", self.false_alarm());
        let _ = writeln!(out, "tp fp tn fn    {} {} {} {}", c.tp, c.fp, c.tn, c.fn_);
        out
    }

    pub fn to_csv(&self) -> String {
        let c = &self.counts;
        format!(
            "threshold,recall,fa,tp,fp,tn,fn\n{},{},{},{},{},{},{}\n",
            self.threshold,
            self.recall(),
            self.false_alarm(),
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        )
    }
}
