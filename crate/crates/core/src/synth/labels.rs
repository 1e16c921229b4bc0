use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::AudioClip;
use crate::transcripts::IntervalSet;

/// Frames within this many dB of the clip peak count as speech.
pub const SPEECH_FLOOR_DB: f64 = -19.0;
pub const LABEL_RATE: u32 = 100;

/// Per-10 ms speech/non-speech labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabels {
    pub speech: Vec<bool>,
}

impl FrameLabels {
    pub fn len(&self) -> usize {
        self.speech.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speech.is_empty()
    }

    pub fn speech_fraction(&self) -> f64 {
        if self.speech.is_empty() {
            return 0.0;
        }
        self.speech.iter().filter(|&&s| s).count() as f64 / self.speech.len() as f64
    }

    /// Speech runs as time intervals `[i/100, (j+1)/100]`.
    pub fn intervals(&self) -> IntervalSet {
        let rate = LABEL_RATE as f64;
        let mut pairs = Vec::new();
        let mut start = None;
        for (i, &s) in self.speech.iter().chain(std::iter::once(&false)).enumerate() {
            match (s, start) {
                (true, None) => start = Some(i),
                (false, Some(a)) => {
                    pairs.push((a as f64 / rate, i as f64 / rate));
                    start = None;
                }
                _ => {}
            }
        }
        IntervalSet::from_pairs(pairs)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("#rate={LABEL_RATE}\n");
        s.extend(self.speech.iter().map(|&v| if v { 's' } else { 'n' }));
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let parse_err = |line: usize, msg: &str| Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.to_string(),
        };
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty label file"))?
            .map_err(|e| Error::io(path, e))?;
        if header.trim() != format!("#rate={LABEL_RATE}") {
            return Err(parse_err(1, "expected #rate=100 header"));
        }
        let body = lines
            .next()
            .unwrap_or(Ok(String::new()))
            .map_err(|e| Error::io(path, e))?;
        let speech = body
            .trim_end()
            .chars()
            .map(|c| match c {
                's' => Ok(true),
                'n' => Ok(false),
                _ => Err(parse_err(2, &format!("unexpected label character {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { speech })
    }
}

/// Labels every 10 ms frame of a clean speech clip: a frame is non-speech
/// iff its peak lies more than 19 dB below the clip peak. A silent clip is
/// entirely non-speech.
pub fn label_speech_frames(clean: &AudioClip) -> FrameLabels {
    let hop = (clean.sample_rate / LABEL_RATE) as usize;
    let frames = clean.samples.len().div_ceil(hop);
    let global = clean.peak() as f64;
    if global == 0.0 {
        return FrameLabels {
            speech: vec![false; frames],
        };
    }
    let speech = clean
        .samples
        .chunks(hop)
        .map(|frame| {
            let p = frame.iter().fold(0.0f32, |a, v| a.max(v.abs())) as f64;
            p > 0.0 && 20.0 * (p / global).log10() >= SPEECH_FLOOR_DB - 1e-9
        })
        .collect();
    FrameLabels { speech }
}
