//! Filler candidates: stretches where the VAD hears voice but the
//! transcript has no word, exported as 5 s context clips.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{write_wav, AudioClip, WavFormat};
use crate::transcripts::{IntervalSet, Transcript};

pub const MIN_DUR: f64 = 0.15;
pub const MAX_DUR: f64 = 2.0;
/// Context before the gap start and total clip length.
pub const PRE_CONTEXT: f64 = 3.0;
pub const CLIP_LEN: f64 = 5.0;

/// Voiced time not covered by any word, keeping pieces whose duration lies
/// in `[min_dur, max_dur]`.
pub fn generate_candidates(speech: &IntervalSet, transcript: &Transcript, min_dur: f64, max_dur: f64) -> IntervalSet {
    speech
        .subtract(&transcript.word_intervals())
        .filter_duration(min_dur, max_dur)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateStatus {
    Unlabeled,
    Labeled,
    Resolved,
}

/// Row of the candidate manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateClip {
    pub id: String,
    pub episode: String,
    pub gap_start_s: f64,
    pub gap_end_s: f64,
    pub clip_path: String,
    pub highlight_start_s: f64,
    pub highlight_end_s: f64,
    pub status: CandidateStatus,
    #[serde(default)]
    pub label: String,
}

impl CandidateClip {
    /// Episode-time start of the exported clip.
    pub fn clip_start(&self) -> f64 {
        self.gap_start_s - self.highlight_start_s
    }
}

pub fn candidate_id(episode: &str, start: f64, end: f64) -> String {
    format!(
        "{episode}_{}_{}",
        (start * 1000.0).round() as i64,
        (end * 1000.0).round() as i64
    )
}

/// Context window `[gap_start - 3, gap_start + 2]`, shifted to stay inside
/// `[0, episode_dur]` and extended when the gap outlasts the tail.
pub fn context_window(gap: (f64, f64), episode_dur: f64) -> (f64, f64) {
    let mut start = gap.0 - PRE_CONTEXT;
    let mut end = start + CLIP_LEN;
    if end < gap.1 {
        end = gap.1;
    }
    let len = end - start;
    if start < 0.0 {
        start = 0.0;
        end = len;
    }
    if end > episode_dur {
        end = episode_dur;
        start = (episode_dur - len).max(0.0);
    }
    (start, end)
}

/// Writes one WAV per gap into `out_dir/clips/` and returns manifest rows
/// with clip paths relative to `out_dir`.
pub fn export_candidate_clips(
    episode: &str,
    audio: &AudioClip,
    gaps: &IntervalSet,
    out_dir: &Path,
) -> Result<Vec<CandidateClip>> {
    let dur = audio.duration();
    let mut rows = Vec::with_capacity(gaps.len());
    if gaps.is_empty() {
        return Ok(rows);
    }
    let clip_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    for &(a, b) in gaps.spans() {
        if a < -1e-9 || b > dur + 1e-9 {
            return Err(Error::Invalid(format!(
                "gap [{a}, {b}] outside the {dur} s episode"
            )));
        }
        let (cs, ce) = context_window((a, b), dur);
        let id = candidate_id(episode, a, b);
        let rel = format!("clips/{id}.wav");
        let clip = audio.slice_padded(cs, ce);
        write_wav(out_dir.join(&rel), &clip, WavFormat::Float32)?;
        rows.push(CandidateClip {
            id,
            episode: episode.to_string(),
            gap_start_s: a,
            gap_end_s: b,
            clip_path: rel,
            highlight_start_s: a - cs,
            highlight_end_s: b - cs,
            status: CandidateStatus::Unlabeled,
            label: String::new(),
        });
    }
    Ok(rows)
}

pub fn read_candidate_manifest(path: &Path) -> Result<Vec<CandidateClip>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_candidate_manifest(path: &Path, rows: &[CandidateClip]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record([
            "id",
            "episode",
            "gap_start_s",
            "gap_end_s",
            "clip_path",
            "highlight_start_s",
            "highlight_end_s",
            "status",
            "label",
        ])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
