use rand::Rng;
use serde::{Deserialize, Serialize};

use super::labels::{label_speech_frames, FrameLabels, LABEL_RATE};
use crate::error::{Error, Result};
use crate::signal::{AudioClip, WORKING_RATE};

/// Peak of the summed mixture after limiting.
pub const PEAK_LIMIT: f64 = 0.99;
/// Sources whose RMS over the overlap with active speech falls below this
/// fraction of their RMS over their own span are levelled over the span.
pub const OVERLAP_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceRole {
    /// Looped from its onset to the end of the mixture.
    Background,
    /// Placed once at its onset.
    Foreground,
    /// Looped like background.
    Music,
}

#[derive(Debug, Clone)]
pub struct SourceEvent<'a> {
    pub clip: &'a AudioClip,
    pub role: SourceRole,
    pub snr_db: f64,
    pub onset_s: f64,
}

#[derive(Debug, Clone)]
pub struct MixSpec<'a> {
    pub speech: &'a AudioClip,
    pub events: Vec<SourceEvent<'a>>,
    pub duration_s: f64,
    pub seed: u64,
}

/// One scaled source as it appears in the mixture.
#[derive(Debug, Clone)]
pub struct Stem {
    pub role: SourceRole,
    pub snr_db: f64,
    /// Sample range `[start, end)` the source occupies.
    pub span: (usize, usize),
    /// SNR gain applied before peak limiting.
    pub gain: f64,
    pub samples: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct MixResult {
    pub audio: AudioClip,
    pub labels: FrameLabels,
    pub global_gain: f64,
    /// Speech as it appears in the mixture (after the global gain).
    pub speech: Vec<f32>,
    pub stems: Vec<Stem>,
}

fn rms_over(x: &[f64], mask: impl Iterator<Item = usize>) -> (f64, usize) {
    let mut acc = 0.0;
    let mut n = 0;
    for i in mask {
        acc += x[i] * x[i];
        n += 1;
    }
    if n == 0 {
        (0.0, 0)
    } else {
        ((acc / n as f64).sqrt(), n)
    }
}

/// Mixes speech with scaled sources. Each source is scaled so that the
/// speech-to-source RMS ratio matches its target SNR over the samples where
/// the source is present and the clean speech is labelled active. If the
/// source is (nearly) silent there, see [`OVERLAP_FLOOR`], speech RMS over
/// all active samples is compared with source RMS over its own span. The sum is then scaled
/// by one global gain so that its peak does not exceed [`PEAK_LIMIT`].
pub fn mix(spec: &MixSpec) -> Result<MixResult> {
    if spec.speech.sample_rate != WORKING_RATE {
        return Err(Error::Invalid(format!(
            "speech must be at {WORKING_RATE} Hz, got {}",
            spec.speech.sample_rate
        )));
    }
    if !(spec.duration_s > 0.0) {
        return Err(Error::Invalid("mixture duration must be positive".into()));
    }
    let n = (spec.duration_s * WORKING_RATE as f64).round() as usize;
    let mut speech: Vec<f64> = spec.speech.samples.iter().take(n).map(|&v| v as f64).collect();
    speech.resize(n, 0.0);
    let speech_clip = AudioClip {
        samples: speech.iter().map(|&v| v as f32).collect(),
        sample_rate: WORKING_RATE,
    };
    let labels = label_speech_frames(&speech_clip);
    let hop = (WORKING_RATE / LABEL_RATE) as usize;
    let active: Vec<bool> = (0..n).map(|i| labels.speech[i / hop]).collect();
    let (speech_rms_all, _) = rms_over(&speech, (0..n).filter(|&i| active[i]));
    if speech_rms_all == 0.0 {
        return Err(Error::Invalid("speech is silent; SNR undefined".into()));
    }

    let mut sum = speech.clone();
    let mut stems = Vec::with_capacity(spec.events.len());
    for ev in &spec.events {
        if ev.clip.sample_rate != WORKING_RATE {
            return Err(Error::Invalid(format!(
                "source must be at {WORKING_RATE} Hz, got {}",
                ev.clip.sample_rate
            )));
        }
        if ev.clip.samples.is_empty() {
            return Err(Error::Invalid("empty source clip".into()));
        }
        let start = ((ev.onset_s.max(0.0)) * WORKING_RATE as f64).round() as usize;
        if start >= n {
            return Err(Error::Invalid(format!(
                "source onset {} s beyond mixture end",
                ev.onset_s
            )));
        }
        let end = match ev.role {
            SourceRole::Foreground => (start + ev.clip.samples.len()).min(n),
            SourceRole::Background | SourceRole::Music => n,
        };
        let mut placed = vec![0.0; n];
        let src = &ev.clip.samples;
        for (k, v) in placed[start..end].iter_mut().enumerate() {
            *v = src[k % src.len()] as f64;
        }
        let overlap = || (start..end).filter(|&i| active[i]);
        let span_rms = rms_over(&placed, start..end).0;
        let overlap_rms = rms_over(&placed, overlap()).0;
        let (speech_rms, src_rms) = if overlap_rms >= OVERLAP_FLOOR * span_rms && overlap_rms > 0.0 {
            (rms_over(&speech, overlap()).0, overlap_rms)
        } else {
            (speech_rms_all, span_rms)
        };
        if src_rms == 0.0 {
            return Err(Error::Invalid("source is silent where it is mixed".into()));
        }
        let gain = speech_rms / (src_rms * 10f64.powf(ev.snr_db / 20.0));
        for (s, p) in sum.iter_mut().zip(placed.iter_mut()) {
            *p *= gain;
            *s += *p;
        }
        stems.push((ev, start, end, gain, placed));
    }

    let peak = sum.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let global_gain = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };
    let to_f32 = |x: &[f64]| -> Vec<f32> { x.iter().map(|&v| (v * global_gain) as f32).collect() };
    Ok(MixResult {
        audio: AudioClip {
            samples: to_f32(&sum),
            sample_rate: WORKING_RATE,
        },
        labels,
        global_gain,
        speech: to_f32(&speech),
        stems: stems
            .into_iter()
            .map(|(ev, start, end, gain, placed)| Stem {
                role: ev.role,
                snr_db: ev.snr_db,
                span: (start, end),
                gain,
                samples: to_f32(&placed),
            })
            .collect(),
    })
}

/// Target SNR ranges in dB, inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnrConfig {
    pub background: (f64, f64),
    pub foreground: (f64, f64),
    pub music: (f64, f64),
    /// Probability that a mixture gets a background source.
    pub p_background: f64,
    pub p_music: f64,
    pub max_foreground: usize,
}

impl Default for SnrConfig {
    fn default() -> Self {
        Self {
            background: (12.0, 22.0),
            foreground: (-3.0, 17.0),
            music: (-6.0, 14.0),
            p_background: 1.0,
            p_music: 0.3,
            max_foreground: 2,
        }
    }
}

impl SnrConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("background", self.background),
            ("foreground", self.foreground),
            ("music", self.music),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Invalid(format!("bad {name} SNR range ({lo}, {hi})")));
            }
        }
        for p in [self.p_background, self.p_music] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Invalid(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn draw<R: Rng>(range: (f64, f64), rng: &mut R) -> f64 {
        if range.0 == range.1 {
            range.0
        } else {
            rng.gen_range(range.0..=range.1)
        }
    }

    /// Draws the source events of one mixture from the given pools.
    pub fn draw_events<'a, R: Rng>(
        &self,
        duration_s: f64,
        background: &'a [AudioClip],
        foreground: &'a [AudioClip],
        music: &'a [AudioClip],
        rng: &mut R,
    ) -> Vec<SourceEvent<'a>> {
        let mut events = Vec::new();
        if !background.is_empty() && rng.gen_bool(self.p_background) {
            events.push(SourceEvent {
                clip: &background[rng.gen_range(0..background.len())],
                role: SourceRole::Background,
                snr_db: Self::draw(self.background, rng),
                onset_s: 0.0,
            });
        }
        if !music.is_empty() && rng.gen_bool(self.p_music) {
            events.push(SourceEvent {
                clip: &music[rng.gen_range(0..music.len())],
                role: SourceRole::Music,
                snr_db: Self::draw(self.music, rng),
                onset_s: 0.0,
            });
        }
        if !foreground.is_empty() && self.max_foreground > 0 {
            for _ in 0..rng.gen_range(0..=self.max_foreground) {
                events.push(SourceEvent {
                    clip: &foreground[rng.gen_range(0..foreground.len())],
                    role: SourceRole::Foreground,
                    snr_db: Self::draw(self.foreground, rng),
                    onset_s: rng.gen_range(0.0..duration_s * 0.95),
                });
            }
        }
        events
    }
}
