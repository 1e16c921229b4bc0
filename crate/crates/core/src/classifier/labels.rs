use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Annotation vocabulary: five filler labels, then eight non-filler ones.
pub const ANNOTATION13: [&str; 13] = [
    "uh",
    "um",
    "you_know",
    "like",
    "other",
    "laughter",
    "breath",
    "agreement_sound",
    "regular_words",
    "repetitions",
    "simultaneous_speakers",
    "music",
    "noise",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSet {
    Coarse5,
    Granular6,
    Annotation13,
}

impl LabelSet {
    pub fn labels(self) -> Vec<&'static str> {
        match self {
            LabelSet::Coarse5 => vec!["filler", "words", "laughter", "music", "breath"],
            LabelSet::Granular6 => vec!["uh", "um", "words", "laughter", "music", "breath"],
            LabelSet::Annotation13 => ANNOTATION13.to_vec(),
        }
    }

    /// Class assigned to frames not covered by any event.
    pub fn background(self) -> &'static str {
        match self {
            LabelSet::Annotation13 => "regular_words",
            _ => "words",
        }
    }

    /// Labels counted as fillers when scoring detections.
    pub fn filler_labels(self) -> Vec<&'static str> {
        match self {
            LabelSet::Coarse5 => vec!["filler"],
            LabelSet::Granular6 => vec!["uh", "um"],
            LabelSet::Annotation13 => vec!["uh", "um"],
        }
    }

    pub fn index_of(self, label: &str) -> Option<usize> {
        self.labels().iter().position(|l| *l == label)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSet::Coarse5 => "coarse5",
            LabelSet::Granular6 => "granular6",
            LabelSet::Annotation13 => "annotation13",
        })
    }
}

impl FromStr for LabelSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse5" => Ok(LabelSet::Coarse5),
            "granular6" => Ok(LabelSet::Granular6),
            "annotation13" => Ok(LabelSet::Annotation13),
            _ => Err(Error::Invalid(format!("unknown label set '{s}'"))),
        }
    }
}

/// Lower-case with spaces and hyphens as underscores.
pub fn canonical_label(label: &str) -> String {
    label.trim().to_lowercase().replace([' ', '-'], "_")
}

/// Maps an annotation label into `target`. `Ok(None)` means the label is
/// deliberately dropped (rare classes, and `agreement_sound`).
pub fn map_label(annotation_label: &str, target: LabelSet) -> Result<Option<&'static str>> {
    let l = canonical_label(annotation_label);
    let idx = ANNOTATION13
        .iter()
        .position(|a| *a == l)
        .ok_or_else(|| Error::Invalid(format!("unknown annotation label '{annotation_label}'")))?;
    let name = ANNOTATION13[idx];
    Ok(match target {
        LabelSet::Annotation13 => Some(name),
        LabelSet::Coarse5 | LabelSet::Granular6 => match name {
            "uh" | "um" if target == LabelSet::Coarse5 => Some("filler"),
            "uh" | "um" => Some(name),
            "regular_words" | "repetitions" => Some("words"),
            "laughter" | "music" | "breath" => Some(name),
            _ => None,
        },
    })
}

/// Like [`map_label`], but labels already in `target` pass through.
pub fn resolve_label(label: &str, target: LabelSet) -> Result<Option<&'static str>> {
    let l = canonical_label(label);
    if let Some(i) = target.index_of(&l) {
        return Ok(Some(target.labels()[i]));
    }
    map_label(&l, target)
}
