use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mix::{mix, MixSpec, SourceEvent, SourceRole};
use super::tokens::{synth_background, synth_breath, synth_laughter, synth_music, synth_tokens, TokenKind};
use crate::error::Result;
use crate::event::Event;
use crate::signal::{AudioClip, WORKING_RATE};
use crate::transcripts::{Transcript, Word};

const VOCAB: [&str; 16] = [
    "the", "and", "so", "we", "just", "really", "think", "that", "people", "about", "going", "know", "right",
    "time", "because", "here",
];
const VOWEL_WORDS: [&str; 3] = ["a", "oh", "i"];

/// Untranscribed sound planted inside a pause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedKind {
    Filler,
    Words,
    Breath,
    Laughter,
    Music,
}

impl PlantedKind {
    pub fn label(self) -> &'static str {
        match self {
            PlantedKind::Filler => "filler",
            PlantedKind::Words => "words",
            PlantedKind::Breath => "breath",
            PlantedKind::Laughter => "laughter",
            PlantedKind::Music => "music",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub duration_s: f64,
    /// Probability that the pause after a word hosts a planted sound.
    pub p_planted: f64,
    /// Relative weights of filler, untranscribed words, breath, laughter, music.
    pub weights: [f64; 5],
    pub filler_dur: (f64, f64),
    pub word_dur: (f64, f64),
    /// Probability that a transcribed word is a sustained vowel ("a", "oh"),
    /// acoustically close to a filler but present in the transcript.
    pub p_vowel_word: f64,
    pub vowel_word_dur: (f64, f64),
    /// Silence kept between a planted sound and its neighbouring words.
    pub margin: (f64, f64),
    pub pause: (f64, f64),
    pub background_snr: (f64, f64),
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            duration_s: 12.0,
            p_planted: 0.45,
            weights: [0.55, 0.25, 0.1, 0.05, 0.05],
            filler_dur: (0.2, 0.8),
            word_dur: (0.15, 0.6),
            p_vowel_word: 0.15,
            vowel_word_dur: (0.12, 0.3),
            margin: (0.1, 0.25),
            pause: (0.1, 0.5),
            background_snr: (20.0, 30.0),
        }
    }
}

/// A synthetic episode with its oracle transcript and the planted,
/// untranscribed sounds as reference events.
#[derive(Debug, Clone)]
pub struct Episode {
    pub name: String,
    pub audio: AudioClip,
    pub transcript: Transcript,
    pub events: Vec<Event>,
}

fn add_at(buf: &mut [f64], at: f64, clip: &AudioClip, gain: f64) {
    let start = (at * WORKING_RATE as f64).round() as usize;
    for (i, &v) in clip.samples.iter().enumerate() {
        if let Some(b) = buf.get_mut(start + i) {
            *b += gain * v as f64;
        }
    }
}

fn pick<R: Rng>(weights: &[f64; 5], rng: &mut R) -> PlantedKind {
    let total: f64 = weights.iter().sum();
    let mut r = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
    for (w, kind) in weights.iter().zip([
        PlantedKind::Filler,
        PlantedKind::Words,
        PlantedKind::Breath,
        PlantedKind::Laughter,
        PlantedKind::Music,
    ]) {
        if r < *w {
            return kind;
        }
        r -= w;
    }
    PlantedKind::Filler
}

/// Alternates transcribed word-like tokens with pauses; some pauses get a
/// planted filler or distractor, separated from the words by silent margins.
pub fn synth_episode(name: &str, cfg: &EpisodeConfig, seed: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (cfg.duration_s * WORKING_RATE as f64).round() as usize;
    let mut buf = vec![0.0; n];
    let speaker_f0 = rng.gen_range(90.0..220.0);
    let mut words = Vec::new();
    let mut events = Vec::new();
    let mut t = rng.gen_range(0.2..0.8);
    let end_limit = cfg.duration_s - 0.2;
    loop {
        let vowel = rng.gen_bool(cfg.p_vowel_word);
        let (kind, range, vocab) = if vowel {
            (TokenKind::FillerLike, cfg.vowel_word_dur, &VOWEL_WORDS[..])
        } else {
            (TokenKind::WordLike, cfg.word_dur, &VOCAB[..])
        };
        let d = rng.gen_range(range.0..range.1);
        if t + d > end_limit {
            break;
        }
        let tok = synth_tokens(kind, d, speaker_f0 * rng.gen_range(0.9..1.1), rng.gen())?;
        add_at(&mut buf, t, &tok, rng.gen_range(0.5..1.0));
        words.push(Word {
            text: vocab[rng.gen_range(0..vocab.len())].to_string(),
            start: t,
            end: t + d,
            confidence: None,
        });
        t += d;

        if rng.gen_bool(cfg.p_planted) {
            let kind = pick(&cfg.weights, &mut rng);
            let pre = rng.gen_range(cfg.margin.0..cfg.margin.1);
            let post = rng.gen_range(cfg.margin.0..cfg.margin.1);
            let dur = match kind {
                PlantedKind::Filler => rng.gen_range(cfg.filler_dur.0..cfg.filler_dur.1),
                PlantedKind::Words => rng.gen_range(cfg.word_dur.0..cfg.word_dur.1),
                PlantedKind::Breath => rng.gen_range(0.2..0.5),
                PlantedKind::Laughter => rng.gen_range(0.4..1.0),
                PlantedKind::Music => rng.gen_range(0.4..1.2),
            };
            let start = t + pre;
            if start + dur + post > end_limit {
                break;
            }
            let f0 = speaker_f0 * rng.gen_range(0.85..1.1);
            let s: u64 = rng.gen();
            let (clip, gain) = match kind {
                PlantedKind::Filler => (synth_tokens(TokenKind::FillerLike, dur, f0, s)?, rng.gen_range(0.5..1.0)),
                PlantedKind::Words => (synth_tokens(TokenKind::WordLike, dur, f0, s)?, rng.gen_range(0.5..1.0)),
                PlantedKind::Breath => (synth_breath(dur, s), rng.gen_range(0.15..0.35)),
                PlantedKind::Laughter => (synth_laughter(dur, s), rng.gen_range(0.5..0.9)),
                PlantedKind::Music => (synth_music(dur, s), rng.gen_range(0.3..0.6)),
            };
            add_at(&mut buf, start, &clip, gain);
            events.push(Event {
                start,
                end: start + dur,
                label: kind.label().to_string(),
                confidence: 1.0,
            });
            t = start + dur + post;
        } else {
            t += rng.gen_range(cfg.pause.0..cfg.pause.1);
        }
    }

    let clean = AudioClip {
        samples: buf.iter().map(|&v| v as f32).collect(),
        sample_rate: WORKING_RATE,
    };
    let noise = synth_background(cfg.duration_s.min(4.0), rng.gen());
    let snr = rng.gen_range(cfg.background_snr.0..=cfg.background_snr.1);
    let audio = if clean.peak() > 0.0 {
        mix(&MixSpec {
            speech: &clean,
            events: vec![SourceEvent {
                clip: &noise,
                role: SourceRole::Background,
                snr_db: snr,
                onset_s: 0.0,
            }],
            duration_s: cfg.duration_s,
            seed,
        })?
        .audio
    } else {
        clean
    };
    Ok(Episode {
        name: name.to_string(),
        audio,
        transcript: Transcript::new(words),
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_events_sit_in_transcript_gaps() {
        for seed in 0..10 {
            let ep = synth_episode("ep", &EpisodeConfig::default(), seed).unwrap();
            assert_eq!(ep.audio.samples.len(), 12 * 16000);
            let words = ep.transcript.word_intervals();
            for e in &ep.events {
                assert!(words.intersect(&crate::transcripts::IntervalSet::from_pairs([(e.start, e.end)])).is_empty());
                assert!(e.end <= 12.0);
            }
        }
        let a = synth_episode("ep", &EpisodeConfig::default(), 3).unwrap();
        let b = synth_episode("ep", &EpisodeConfig::default(), 3).unwrap();
        assert_eq!(a.audio, b.audio);
        assert_eq!(a.events, b.events);
    }
}
