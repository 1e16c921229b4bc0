//! ASR transcripts with word timings, and the interval algebra used to find
//! the untranscribed parts of voiced audio.

mod interval;
mod parse;

pub use interval::{IntervalSet, EPS};
pub use parse::{parse_ctm, parse_jsonl, parse_transcript, TranscriptFormat};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    pub start: f64,
    pub end: f64,
    pub confidence: Option<f64>,
}

/// Words sorted by onset. Overlapping words are kept as given; the
/// transcribed region is their union, see [`Transcript::word_intervals`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub words: Vec<Word>,
}

impl Transcript {
    pub fn new(mut words: Vec<Word>) -> Self {
        words.sort_by(|a, b| {
            a.start
                .total_cmp(&b.start)
                .then(a.end.total_cmp(&b.end))
                .then_with(|| a.text.cmp(&b.text))
        });
        Self { words }
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word_intervals(&self) -> IntervalSet {
        IntervalSet::from_pairs(self.words.iter().map(|w| (w.start, w.end)))
    }

    /// Writes the transcript as JSON lines (`{"w","s","e","c"}`).
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for w in &self.words {
            let mut obj = serde_json::json!({"w": w.text, "s": w.start, "e": w.end});
            if let Some(c) = w.confidence {
                obj["c"] = serde_json::json!(c);
            }
            s.push_str(&obj.to_string());
            s.push('\n');
        }
        s
    }
}
