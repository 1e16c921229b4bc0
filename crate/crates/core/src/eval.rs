//! Segment- and event-based precision/recall/F1, frame-level PR curves and
//! confusion matrices.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::classifier::{rasterize, FRAME_RATE};
use crate::error::{Error, Result};
use crate::event::Event;
use crate::signal::FrameSeries;

/// Slack for float noise in collar comparisons.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of P and R, 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    pub fn scores(&self) -> Scores {
        Scores {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-label counts plus their micro-averaged total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub per_label: BTreeMap<String, Scores>,
    pub overall: Scores,
}

impl LabelScores {
    fn from_counts(per: &BTreeMap<String, Counts>) -> Self {
        let mut total = Counts::default();
        for c in per.values() {
            total.add(*c);
        }
        Self {
            per_label: per.iter().map(|(k, v)| (k.clone(), v.scores())).collect(),
            overall: total.scores(),
        }
    }

    pub fn label(&self, label: &str) -> Option<&Scores> {
        self.per_label.get(label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Each prediction, in onset order, takes the earliest compatible
    /// unmatched reference.
    Greedy,
    /// Greedy, then augmenting paths until the matching is maximum.
    #[default]
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub collar: f64,
    pub segment_len: f64,
    pub matching: MatchStrategy,
    /// Timeline length for segment metrics; `None` uses the latest event end.
    pub total_dur: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            collar: 0.2,
            segment_len: 1.0,
            matching: MatchStrategy::Optimal,
            total_dur: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub segment: LabelScores,
    pub event: LabelScores,
    pub config: EvalConfig,
}

fn labels_of<'a>(a: &'a [Event], b: &'a [Event]) -> BTreeSet<&'a str> {
    a.iter().chain(b).map(|e| e.label.as_str()).collect()
}

/// Whether `pred` may match `refe` under the onset/offset collar rule.
pub fn collar_match(refe: &Event, pred: &Event, collar: f64) -> bool {
    refe.label == pred.label
        && (refe.start - pred.start).abs() <= collar + TIME_EPS
        && (refe.end - pred.end).abs() <= collar + TIME_EPS
}

/// One-to-one matching of `pred` to `refs` (both of one label). Returns,
/// for each prediction, the index of its matched reference.
pub fn match_events(refs: &[Event], pred: &[Event], collar: f64, strategy: MatchStrategy) -> Vec<Option<usize>> {
    let by_time = |v: &[Event]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].start.total_cmp(&v[j].start).then(v[i].end.total_cmp(&v[j].end)).then(i.cmp(&j)));
        idx
    };
    let ref_order = by_time(refs);
    let adj: Vec<Vec<usize>> = pred
        .iter()
        .map(|p| ref_order.iter().copied().filter(|&r| collar_match(&refs[r], p, collar)).collect())
        .collect();
    let mut pred_to_ref: Vec<Option<usize>> = vec![None; pred.len()];
    let mut ref_to_pred: Vec<Option<usize>> = vec![None; refs.len()];
    for p in by_time(pred) {
        if let Some(&r) = adj[p].iter().find(|&&r| ref_to_pred[r].is_none()) {
            pred_to_ref[p] = Some(r);
            ref_to_pred[r] = Some(p);
        }
    }
    if strategy == MatchStrategy::Optimal {
        for p in by_time(pred) {
            if pred_to_ref[p].is_none() {
                let mut seen = vec![false; refs.len()];
                augment(p, &adj, &mut seen, &mut pred_to_ref, &mut ref_to_pred);
            }
        }
    }
    pred_to_ref
}

fn augment(
    p: usize,
    adj: &[Vec<usize>],
    seen: &mut [bool],
    pred_to_ref: &mut [Option<usize>],
    ref_to_pred: &mut [Option<usize>],
) -> bool {
    for &r in &adj[p] {
        if seen[r] {
            continue;
        }
        seen[r] = true;
        let free = match ref_to_pred[r] {
            None => true,
            Some(q) => augment(q, adj, seen, pred_to_ref, ref_to_pred),
        };
        if free {
            pred_to_ref[p] = Some(r);
            ref_to_pred[r] = Some(p);
            return true;
        }
    }
    false
}

pub fn event_counts(refs: &[Event], pred: &[Event], collar: f64, strategy: MatchStrategy) -> BTreeMap<String, Counts> {
    let mut out = BTreeMap::new();
    for label in labels_of(refs, pred) {
        let r: Vec<Event> = refs.iter().filter(|e| e.label == label).cloned().collect();
        let p: Vec<Event> = pred.iter().filter(|e| e.label == label).cloned().collect();
        let tp = match_events(&r, &p, collar, strategy).iter().flatten().count();
        out.insert(
            label.to_string(),
            Counts {
                tp,
                fp: p.len() - tp,
                fn_: r.len() - tp,
            },
        );
    }
    out
}

pub fn event_metrics(refs: &[Event], pred: &[Event], collar: f64, strategy: MatchStrategy) -> LabelScores {
    LabelScores::from_counts(&event_counts(refs, pred, collar, strategy))
}

/// Segment `[i L, (i+1) L)` is active for a label iff some event of that
/// label overlaps it with positive length.
pub fn segment_counts(refs: &[Event], pred: &[Event], segment_len: f64, total_dur: f64) -> Result<BTreeMap<String, Counts>> {
    if !(segment_len > 0.0) {
        return Err(Error::Invalid(format!("segment length {segment_len} must be positive")));
    }
    let n = (total_dur / segment_len - TIME_EPS).ceil().max(0.0) as usize;
    let activity = |events: &[Event], label: &str| {
        let mut on = vec![false; n];
        for e in events.iter().filter(|e| e.label == label) {
            let first = (e.start / segment_len).floor().max(0.0) as usize;
            for (i, seg) in on.iter_mut().enumerate().skip(first) {
                let (a, b) = (i as f64 * segment_len, (i + 1) as f64 * segment_len);
                if a >= e.end {
                    break;
                }
                if e.start < b && e.end > a {
                    *seg = true;
                }
            }
        }
        on
    };
    let mut out = BTreeMap::new();
    for label in labels_of(refs, pred) {
        let r = activity(refs, label);
        let p = activity(pred, label);
        let mut c = Counts::default();
        for (&x, &y) in r.iter().zip(&p) {
            match (x, y) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                _ => {}
            }
        }
        out.insert(label.to_string(), c);
    }
    Ok(out)
}

pub fn segment_metrics(refs: &[Event], pred: &[Event], segment_len: f64, total_dur: f64) -> Result<LabelScores> {
    Ok(LabelScores::from_counts(&segment_counts(refs, pred, segment_len, total_dur)?))
}

pub fn evaluate(refs: &[Event], pred: &[Event], cfg: &EvalConfig) -> Result<MetricsReport> {
    for e in refs.iter().chain(pred) {
        e.validate()?;
    }
    let latest = refs.iter().chain(pred).map(|e| e.end).fold(0.0, f64::max);
    let total = cfg.total_dur.unwrap_or(latest).max(latest);
    Ok(MetricsReport {
        segment: segment_metrics(refs, pred, cfg.segment_len, total)?,
        event: event_metrics(refs, pred, cfg.collar, cfg.matching),
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Frame-level PR points: references with a label in `positive` are
/// rasterized onto the likelihood grid by frame centre, and each threshold
/// marks frames with likelihood at or above it as positive.
pub fn pr_curve(refs: &[Event], likelihoods: &FrameSeries, positive: &[&str], thresholds: &[f64]) -> Result<Vec<PrPoint>> {
    if likelihoods.dims() != 1 || (likelihoods.frame_rate - FRAME_RATE).abs() > 1e-9 {
        return Err(Error::Shape(format!(
            "likelihoods must be one value per frame at {FRAME_RATE} Hz"
        )));
    }
    let truth = reference_frames(refs, likelihoods, positive);
    let lik = likelihoods.data();
    Ok(thresholds
        .iter()
        .map(|&t| {
            let mut c = Counts::default();
            for (&l, &r) in lik.iter().zip(&truth) {
                match (l as f64 >= t, r) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    _ => {}
                }
            }
            PrPoint {
                threshold: t,
                precision: c.precision(),
                recall: c.recall(),
            }
        })
        .collect())
}

/// Reference frame labels on the grid of `likelihoods`.
pub fn reference_frames(refs: &[Event], likelihoods: &FrameSeries, positive: &[&str]) -> Vec<bool> {
    rasterize(refs, likelihoods.origin_offset, likelihoods.frames(), positive, usize::MAX)
        .into_iter()
        .map(|c| c != usize::MAX)
        .collect()
}

/// Like [`pr_curve`] over several episodes, pooling frames before scoring.
pub fn pooled_pr_curve(
    episodes: &[(Vec<Event>, FrameSeries)],
    positive: &[&str],
    thresholds: &[f64],
) -> Result<Vec<PrPoint>> {
    let mut truth = Vec::new();
    let mut lik = Vec::new();
    for (refs, l) in episodes {
        truth.extend(reference_frames(refs, l, positive));
        lik.extend_from_slice(l.data());
    }
    let n = lik.len();
    let pooled = FrameSeries::new(lik, n, 1, FRAME_RATE)?;
    let refs: Vec<Event> = truth
        .iter()
        .enumerate()
        .filter(|(_, &t)| t)
        .map(|(i, _)| Event::new(i as f64 / FRAME_RATE, (i + 1) as f64 / FRAME_RATE, "pos", 1.0))
        .collect();
    pr_curve(&refs, &pooled, &["pos"], thresholds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[reference][prediction]`.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(labels: &[&str], reference: &[&str], predicted: &[&str]) -> Result<Self> {
        if reference.len() != predicted.len() {
            return Err(Error::Invalid(format!(
                "{} reference labels but {} predictions",
                reference.len(),
                predicted.len()
            )));
        }
        let idx = |l: &str| {
            labels
                .iter()
                .position(|x| *x == l)
                .ok_or_else(|| Error::Invalid(format!("label '{l}' not in the confusion label set")))
        };
        let k = labels.len();
        let mut counts = vec![vec![0; k]; k];
        for (r, p) in reference.iter().zip(predicted) {
            counts[idx(r)?][idx(p)?] += 1;
        }
        Ok(Self {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            counts,
        })
    }

    /// Rows scaled to sum to 1; empty rows stay 0.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: usize = row.iter().sum();
                row.iter().map(|&c| ratio(c, s)).collect()
            })
            .collect()
    }

    pub fn accuracy(&self) -> f64 {
        let total: usize = self.counts.iter().flatten().sum();
        let diag: usize = (0..self.labels.len()).map(|i| self.counts[i][i]).sum();
        ratio(diag, total)
    }
}
