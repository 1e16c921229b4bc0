use std::path::Path;

use serde::Deserialize;

use super::{Transcript, Word};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranscriptFormat {
    /// One JSON object per line: `{"w": text, "s": start, "e": end, "c": conf}`.
    Jsonl,
    /// `<utt> <channel> <start_s> <dur_s> <word> [conf]`.
    Ctm,
}

impl TranscriptFormat {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "ctm" => Some(Self::Ctm),
            "jsonl" | "json" => Some(Self::Jsonl),
            _ => None,
        }
    }
}

impl std::str::FromStr for TranscriptFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "ctm" => Ok(Self::Ctm),
            other => Err(Error::Invalid(format!("unknown transcript format {other:?}"))),
        }
    }
}

pub fn parse_transcript(path: impl AsRef<Path>, format: TranscriptFormat) -> Result<Transcript> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    match format {
        TranscriptFormat::Jsonl => parse_jsonl(&text, &name),
        TranscriptFormat::Ctm => parse_ctm(&text, &name),
    }
}

#[derive(Deserialize)]
struct JsonWord {
    w: String,
    s: f64,
    e: f64,
    #[serde(default)]
    c: Option<f64>,
}

pub fn parse_jsonl(text: &str, source: &str) -> Result<Transcript> {
    let mut words = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            msg,
        };
        let jw: JsonWord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if let Some(w) = checked_word(jw.w, jw.s, jw.e, jw.c).map_err(err)? {
            words.push(w);
        }
    }
    Ok(Transcript::new(words))
}

pub fn parse_ctm(text: &str, source: &str) -> Result<Transcript> {
    let mut words = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(";;") || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 5 || f.len() > 6 {
            return Err(err(format!("expected 5 or 6 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| err(format!("bad {what} {s:?}")))
        };
        let start = num(f[2], "start")?;
        let dur = num(f[3], "duration")?;
        let conf = f.get(5).map(|c| num(c, "confidence")).transpose()?;
        if let Some(w) = checked_word(f[4].to_string(), start, start + dur, conf).map_err(err)? {
            words.push(w);
        }
    }
    Ok(Transcript::new(words))
}

/// `Ok(None)` for zero-length words, which carry no timing information.
fn checked_word(
    text: String,
    start: f64,
    end: f64,
    confidence: Option<f64>,
) -> std::result::Result<Option<Word>, String> {
    if !start.is_finite() || !end.is_finite() || start < 0.0 {
        return Err(format!("invalid timing [{start}, {end}]"));
    }
    if end < start {
        return Err(format!("word {text:?} ends before it starts"));
    }
    if end - start <= super::EPS {
        log::warn!("dropping zero-duration word {text:?} at {start}");
        return Ok(None);
    }
    Ok(Some(Word {
        text,
        start,
        end,
        confidence,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ctm_line_echo() {
        let t = parse_ctm("ep1 1 12.40 0.31 hello 0.98\n", "t").unwrap();
        let w = &t.words[0];
        assert_eq!(w.text, "hello");
        assert_eq!(w.start, 12.40);
        assert!((w.end - 12.71).abs() < 1e-12);
        assert_eq!(w.confidence, Some(0.98));
    }

    #[test]
    fn empty_input_is_empty_transcript() {
        assert!(parse_ctm("", "t").unwrap().is_empty());
        assert!(parse_jsonl("\n\n", "t").unwrap().is_empty());
    }

    #[test]
    fn jsonl_words_with_optional_confidence() {
        let t = parse_jsonl(
            "{\"w\":\"b\",\"s\":2.0,\"e\":2.5}\n{\"w\":\"a\",\"s\":1.0,\"e\":1.4,\"c\":0.5}\n",
            "t",
        )
        .unwrap();
        assert_eq!(t.words[0].text, "a");
        assert_eq!(t.words[1].confidence, None);
    }

    #[test]
    fn bad_line_reports_line_number() {
        let e = parse_ctm("ep 1 0.0 0.2 ok\nep 1 zero 0.2 bad\n", "f.ctm").unwrap_err();
        match e {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let e = parse_jsonl("{\"w\":1}\n", "f.jsonl").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn zero_duration_words_are_dropped() {
        let t = parse_ctm("ep 1 1.0 0.0 uh\nep 1 2.0 0.3 so\n", "t").unwrap();
        assert_eq!(t.words.len(), 1);
    }

    #[test]
    fn overlapping_words_union_for_intervals() {
        let t = parse_ctm("ep 1 1.0 0.5 a\nep 1 1.3 0.5 b\n", "t").unwrap();
        assert_eq!(t.word_intervals().spans(), &[(1.0, 1.8)]);
    }

    #[test]
    fn jsonl_round_trip() {
        let t = parse_ctm("ep 1 0.5 0.25 x 0.7\nep 1 1.0 0.5 y\n", "t").unwrap();
        assert_eq!(parse_jsonl(&t.to_jsonl(), "t").unwrap(), t);
    }
}
