//! Two-of-three label agreement for filler candidates: work dispatch with
//! leases, an append-only JSON-lines label log, and export of resolved
//! labels.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::candidates::{write_candidate_manifest, CandidateClip, CandidateStatus};
use crate::classifier::{canonical_label, ANNOTATION13};

/// Lease held by an annotator on a served candidate.
pub const LEASE_TIMEOUT_MS: u64 = 10 * 60 * 1000;

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("unknown annotator '{0}'")]
    UnknownAnnotator(String),
    #[error("unknown candidate '{0}'")]
    UnknownCandidate(String),
    #[error("'{0}' is not an annotation label")]
    InvalidLabel(String),
    #[error("{0}")]
    Conflict(String),
    #[error("label log {path}: {msg}")]
    Log { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] crate::Error),
}

pub type AnnotationResult<T> = std::result::Result<T, AnnotationError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub candidate_id: String,
    pub annotator_id: String,
    pub label: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "label", rename_all = "snake_case")]
pub enum ResolutionState {
    NeedsFirst,
    NeedsSecond,
    NeedsThird,
    Resolved(String),
    /// Three different labels; left for expert review.
    Unresolved,
}

impl ResolutionState {
    /// State implied by labels in submission order.
    pub fn from_labels(labels: &[&str]) -> Self {
        match labels {
            [] => Self::NeedsFirst,
            [_] => Self::NeedsSecond,
            [a, b] if a == b => Self::Resolved(a.to_string()),
            [_, _] => Self::NeedsThird,
            [a, b, c] => {
                if a == c || b == c {
                    Self::Resolved(c.to_string())
                } else if a == b {
                    Self::Resolved(a.to_string())
                } else {
                    Self::Unresolved
                }
            }
            _ => Self::Unresolved,
        }
    }

    pub fn is_open(&self) -> bool {
        matches!(self, Self::NeedsFirst | Self::NeedsSecond | Self::NeedsThird)
    }

    fn priority(&self) -> u8 {
        match self {
            Self::NeedsThird => 0,
            Self::NeedsSecond => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateState {
    pub candidate_id: String,
    pub records: Vec<AnnotationRecord>,
    pub state: ResolutionState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub total: usize,
    pub needs_first: usize,
    pub needs_second: usize,
    pub needs_third: usize,
    pub resolved: usize,
    pub unresolved: usize,
    pub records: usize,
    /// Resolved by the first two annotators over all resolved.
    pub agreement_rate: f64,
    /// The same rate restricted to each resolved label.
    pub per_label_agreement: BTreeMap<String, f64>,
}

#[derive(Debug)]
pub struct AnnotationStore {
    candidates: Vec<CandidateClip>,
    index: HashMap<String, usize>,
    records: Vec<Vec<AnnotationRecord>>,
    leases: HashMap<usize, (String, u64)>,
    allowlist: Option<BTreeSet<String>>,
    lease_timeout_ms: u64,
    log: Option<(PathBuf, File)>,
}

/// Validates and canonicalises an annotation label.
pub fn check_label(label: &str) -> AnnotationResult<String> {
    let l = canonical_label(label);
    if ANNOTATION13.contains(&l.as_str()) {
        Ok(l)
    } else {
        Err(AnnotationError::InvalidLabel(label.to_string()))
    }
}

impl AnnotationStore {
    /// In-memory store; labels are not persisted.
    pub fn new(candidates: Vec<CandidateClip>) -> AnnotationResult<Self> {
        let mut index = HashMap::new();
        for (i, c) in candidates.iter().enumerate() {
            if index.insert(c.id.clone(), i).is_some() {
                return Err(AnnotationError::Conflict(format!("duplicate candidate id '{}'", c.id)));
            }
        }
        Ok(Self {
            records: vec![Vec::new(); candidates.len()],
            candidates,
            index,
            leases: HashMap::new(),
            allowlist: None,
            lease_timeout_ms: LEASE_TIMEOUT_MS,
            log: None,
        })
    }

    /// Store backed by the JSON-lines log at `path`: existing records are
    /// replayed, new ones appended.
    pub fn open(candidates: Vec<CandidateClip>, path: &Path) -> AnnotationResult<Self> {
        let mut store = Self::new(candidates)?;
        let log_err = |msg: String| AnnotationError::Log {
            path: path.to_path_buf(),
            msg,
        };
        if path.exists() {
            let f = File::open(path).map_err(|e| log_err(e.to_string()))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| log_err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: AnnotationRecord =
                    serde_json::from_str(&line).map_err(|e| log_err(format!("line {}: {e}", n + 1)))?;
                store
                    .apply(rec)
                    .map_err(|e| log_err(format!("line {}: {e}", n + 1)))?;
            }
        }
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| log_err(e.to_string()))?;
        store.log = Some((path.to_path_buf(), f));
        Ok(store)
    }

    /// Rebuilds states from records alone, as a replay of the log would.
    pub fn replay(candidates: Vec<CandidateClip>, records: &[AnnotationRecord]) -> AnnotationResult<Self> {
        let mut store = Self::new(candidates)?;
        for r in records {
            store.apply(r.clone())?;
        }
        Ok(store)
    }

    pub fn with_allowlist(mut self, annotators: impl IntoIterator<Item = String>) -> Self {
        self.allowlist = Some(annotators.into_iter().collect());
        self
    }

    pub fn with_lease_timeout(mut self, ms: u64) -> Self {
        self.lease_timeout_ms = ms;
        self
    }

    fn check_annotator(&self, annotator: &str) -> AnnotationResult<()> {
        let known = match &self.allowlist {
            Some(a) => a.contains(annotator),
            None => !annotator.trim().is_empty(),
        };
        if known {
            Ok(())
        } else {
            Err(AnnotationError::UnknownAnnotator(annotator.to_string()))
        }
    }

    fn idx(&self, candidate: &str) -> AnnotationResult<usize> {
        self.index
            .get(candidate)
            .copied()
            .ok_or_else(|| AnnotationError::UnknownCandidate(candidate.to_string()))
    }

    fn state_at(&self, i: usize) -> ResolutionState {
        let labels: Vec<&str> = self.records[i].iter().map(|r| r.label.as_str()).collect();
        ResolutionState::from_labels(&labels)
    }

    pub fn candidate(&self, id: &str) -> AnnotationResult<&CandidateClip> {
        Ok(&self.candidates[self.idx(id)?])
    }

    pub fn candidates(&self) -> &[CandidateClip] {
        &self.candidates
    }

    pub fn state(&self, id: &str) -> AnnotationResult<CandidateState> {
        let i = self.idx(id)?;
        Ok(CandidateState {
            candidate_id: id.to_string(),
            records: self.records[i].clone(),
            state: self.state_at(i),
        })
    }

    pub fn snapshot(&self) -> Vec<CandidateState> {
        self.candidates
            .iter()
            .map(|c| self.state(&c.id).expect("indexed candidate"))
            .collect()
    }

    /// All records in submission order.
    pub fn records(&self) -> Vec<AnnotationRecord> {
        let mut all: Vec<AnnotationRecord> = self.records.iter().flatten().cloned().collect();
        all.sort_by(|a, b| a.timestamp.cmp(&b.timestamp));
        all
    }

    /// Serves the open candidate this annotator has not labelled, preferring
    /// those closest to resolution, and leases it until `now_ms` plus the
    /// lease timeout. A live lease the annotator already holds is returned
    /// again.
    pub fn next_candidate(&mut self, annotator: &str, now_ms: u64) -> AnnotationResult<Option<CandidateClip>> {
        self.check_annotator(annotator)?;
        self.leases.retain(|_, (_, exp)| *exp > now_ms);
        let held = self
            .leases
            .iter()
            .filter(|(i, (a, _))| a == annotator && self.state_at(**i).is_open())
            .map(|(i, _)| *i)
            .min();
        let pick = held.or_else(|| {
            (0..self.candidates.len())
                .filter(|&i| {
                    self.state_at(i).is_open()
                        && !self.records[i].iter().any(|r| r.annotator_id == annotator)
                        && !self.leases.contains_key(&i)
                })
                .min_by_key(|&i| (self.state_at(i).priority(), i))
        });
        Ok(pick.map(|i| {
            self.leases
                .insert(i, (annotator.to_string(), now_ms + self.lease_timeout_ms));
            self.candidates[i].clone()
        }))
    }

    /// Records a label and returns the new state. Resubmitting the same
    /// label is a no-op; a different one is rejected.
    pub fn submit(
        &mut self,
        candidate: &str,
        annotator: &str,
        label: &str,
        now_ms: u64,
    ) -> AnnotationResult<CandidateState> {
        self.check_annotator(annotator)?;
        let i = self.idx(candidate)?;
        let label = check_label(label)?;
        if let Some(prev) = self.records[i].iter().find(|r| r.annotator_id == annotator) {
            if prev.label == label {
                return self.state(candidate);
            }
            return Err(AnnotationError::Conflict(format!(
                "{annotator} already labelled {candidate} as '{}'",
                prev.label
            )));
        }
        if let Some((holder, exp)) = self.leases.get(&i) {
            if holder != annotator && *exp > now_ms {
                return Err(AnnotationError::Conflict(format!("{candidate} is leased to another annotator")));
            }
        }
        // Validate before logging so the log only holds applicable records.
        self.check_open(i, annotator)?;
        let rec = AnnotationRecord {
            candidate_id: candidate.to_string(),
            annotator_id: annotator.to_string(),
            label,
            timestamp: now_ms,
        };
        if let Some((path, f)) = &mut self.log {
            let line = serde_json::to_string(&rec).map_err(crate::Error::from)?;
            writeln!(f, "{line}")
                .and_then(|_| f.flush())
                .map_err(|e| AnnotationError::Log {
                    path: path.clone(),
                    msg: e.to_string(),
                })?;
        }
        self.apply(rec)?;
        self.leases.remove(&i);
        self.state(candidate)
    }

    /// Whether `annotator` may add a label to candidate `i`.
    fn check_open(&self, i: usize, annotator: &str) -> AnnotationResult<()> {
        let id = &self.candidates[i].id;
        if !self.state_at(i).is_open() {
            return Err(AnnotationError::Conflict(format!("{id} is already {:?}", self.state_at(i))));
        }
        if self.records[i].iter().any(|r| r.annotator_id == annotator) {
            return Err(AnnotationError::Conflict(format!("{annotator} labelled {id} twice")));
        }
        Ok(())
    }

    fn apply(&mut self, rec: AnnotationRecord) -> AnnotationResult<()> {
        let i = self.idx(&rec.candidate_id)?;
        check_label(&rec.label)?;
        self.check_open(i, &rec.annotator_id)?;
        self.records[i].push(rec);
        Ok(())
    }

    pub fn stats(&self) -> AgreementStats {
        let mut s = AgreementStats {
            total: self.candidates.len(),
            needs_first: 0,
            needs_second: 0,
            needs_third: 0,
            resolved: 0,
            unresolved: 0,
            records: self.records.iter().map(Vec::len).sum(),
            agreement_rate: 0.0,
            per_label_agreement: BTreeMap::new(),
        };
        let mut by_label: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        let mut first_two = 0;
        for i in 0..self.candidates.len() {
            match self.state_at(i) {
                ResolutionState::NeedsFirst => s.needs_first += 1,
                ResolutionState::NeedsSecond => s.needs_second += 1,
                ResolutionState::NeedsThird => s.needs_third += 1,
                ResolutionState::Unresolved => s.unresolved += 1,
                ResolutionState::Resolved(l) => {
                    s.resolved += 1;
                    let quick = self.records[i].len() == 2;
                    first_two += quick as usize;
                    let e = by_label.entry(l).or_default();
                    e.0 += quick as usize;
                    e.1 += 1;
                }
            }
        }
        if s.resolved > 0 {
            s.agreement_rate = first_two as f64 / s.resolved as f64;
        }
        s.per_label_agreement = by_label
            .into_iter()
            .map(|(l, (q, n))| (l, q as f64 / n as f64))
            .collect();
        s
    }

    /// Resolved candidates with their final labels.
    pub fn resolved_candidates(&self) -> Vec<CandidateClip> {
        (0..self.candidates.len())
            .filter_map(|i| match self.state_at(i) {
                ResolutionState::Resolved(l) => {
                    let mut c = self.candidates[i].clone();
                    c.status = CandidateStatus::Resolved;
                    c.label = l;
                    Some(c)
                }
                _ => None,
            })
            .collect()
    }

    /// Writes resolved candidates as a candidate manifest.
    pub fn export_labeled_dataset(&self, out: &Path) -> AnnotationResult<AgreementStats> {
        write_candidate_manifest(out, &self.resolved_candidates())?;
        Ok(self.stats())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(id: &str) -> CandidateClip {
        CandidateClip {
            id: id.into(),
            episode: "ep".into(),
            gap_start_s: 3.0,
            gap_end_s: 3.3,
            clip_path: format!("clips/{id}.wav"),
            highlight_start_s: 3.0,
            highlight_end_s: 3.3,
            status: CandidateStatus::Unlabeled,
            label: String::new(),
        }
    }

    fn store(n: usize) -> AnnotationStore {
        AnnotationStore::new((0..n).map(|i| clip(&format!("c{i}"))).collect()).unwrap()
    }

    #[test]
    fn resolution_table() {
        use ResolutionState::*;
        assert_eq!(ResolutionState::from_labels(&["uh", "uh"]), Resolved("uh".into()));
        assert_eq!(ResolutionState::from_labels(&["uh", "um"]), NeedsThird);
        assert_eq!(ResolutionState::from_labels(&["uh", "um", "um"]), Resolved("um".into()));
        assert_eq!(ResolutionState::from_labels(&["uh", "um", "breath"]), Unresolved);
    }

    #[test]
    fn dispatch_prefers_nearly_resolved() {
        let mut s = store(3);
        assert_eq!(s.next_candidate("a", 0).unwrap().unwrap().id, "c0");
        s.submit("c0", "a", "uh", 1).unwrap();
        // b is sent to c0 (needs a second label) before any fresh one.
        assert_eq!(s.next_candidate("b", 2).unwrap().unwrap().id, "c0");
        s.submit("c0", "b", "um", 3).unwrap();
        assert_eq!(s.next_candidate("a", 4).unwrap().unwrap().id, "c1");
        assert_eq!(s.next_candidate("c", 5).unwrap().unwrap().id, "c0");
    }

    #[test]
    fn leases_exclude_and_expire() {
        let mut s = store(2).with_lease_timeout(100);
        let a = s.next_candidate("a", 0).unwrap().unwrap();
        let b = s.next_candidate("b", 0).unwrap().unwrap();
        assert_ne!(a.id, b.id);
        assert!(s.next_candidate("c", 50).unwrap().is_none());
        assert!(s.submit(&a.id, "c", "uh", 50).is_err());
        assert_eq!(s.next_candidate("c", 150).unwrap().unwrap().id, "c0");
    }

    #[test]
    fn submissions_are_idempotent_per_annotator() {
        let mut s = store(1);
        s.submit("c0", "a", "uh", 0).unwrap();
        assert_eq!(s.submit("c0", "a", "UH", 1).unwrap().records.len(), 1);
        assert!(matches!(s.submit("c0", "a", "um", 2), Err(AnnotationError::Conflict(_))));
        assert!(matches!(s.submit("c0", "b", "hmm", 3), Err(AnnotationError::InvalidLabel(_))));
        assert!(matches!(s.submit("zz", "b", "uh", 3), Err(AnnotationError::UnknownCandidate(_))));
    }

    #[test]
    fn allowlist_rejects_strangers() {
        let mut s = store(1).with_allowlist(["a".to_string()]);
        assert!(matches!(s.next_candidate("x", 0), Err(AnnotationError::UnknownAnnotator(_))));
        assert!(s.next_candidate("a", 0).unwrap().is_some());
    }

    #[test]
    fn log_replay_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let cands: Vec<CandidateClip> = (0..4).map(|i| clip(&format!("c{i}"))).collect();
        let mut s = AnnotationStore::open(cands.clone(), &path).unwrap();
        s.submit("c0", "a", "uh", 1).unwrap();
        s.submit("c0", "b", "uh", 2).unwrap();
        s.submit("c1", "a", "um", 3).unwrap();
        s.submit("c1", "b", "uh", 4).unwrap();
        s.submit("c1", "c", "breath", 5).unwrap();
        s.submit("c2", "a", "breath", 6).unwrap();
        let snap = s.snapshot();
        drop(s);
        let back = AnnotationStore::open(cands, &path).unwrap();
        assert_eq!(back.snapshot(), snap);
        let st = back.stats();
        assert_eq!((st.resolved, st.unresolved, st.needs_second, st.needs_first), (1, 1, 1, 1));
        assert_eq!(st.agreement_rate, 1.0);
        let out = dir.path().join("resolved.csv");
        back.export_labeled_dataset(&out).unwrap();
        let rows = crate::candidates::read_candidate_manifest(&out).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].label, "uh");
    }

    #[test]
    fn rejected_submissions_are_not_logged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let cands = vec![clip("c0")];
        let mut s = AnnotationStore::open(cands.clone(), &path).unwrap();
        s.submit("c0", "a", "uh", 1).unwrap();
        s.submit("c0", "b", "uh", 2).unwrap();
        assert!(matches!(s.submit("c0", "c", "um", 3), Err(AnnotationError::Conflict(_))));
        drop(s);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
        let back = AnnotationStore::open(cands, &path).unwrap();
        assert_eq!(back.state("c0").unwrap().state, ResolutionState::Resolved("uh".into()));
    }
}
