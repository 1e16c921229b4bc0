//! Desk-scale sound generators: vowel-like fillers, word-like tokens, and
//! the noise, music, breath and laughter sources used for mixing.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{AudioClip, WORKING_RATE};

const SR: f64 = WORKING_RATE as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    FillerLike,
    WordLike,
}

fn samples_for(duration: f64) -> usize {
    (duration * SR).round() as usize
}

/// Raised-cosine fade in over `attack` samples and out over `release`.
fn apply_ramps(x: &mut [f64], attack: usize, release: usize) {
    let n = x.len();
    let attack = attack.min(n / 2);
    let release = release.min(n / 2);
    for i in 0..attack {
        x[i] *= 0.5 - 0.5 * (PI * i as f64 / attack as f64).cos();
    }
    for i in 0..release {
        x[n - 1 - i] *= 0.5 - 0.5 * (PI * i as f64 / release as f64).cos();
    }
}

fn normalize(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        let g = peak / m;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

fn to_clip(x: Vec<f64>) -> AudioClip {
    AudioClip {
        samples: x.into_iter().map(|v| v as f32).collect(),
        sample_rate: WORKING_RATE,
    }
}

fn check_duration(duration: f64) -> Result<()> {
    if !(0.05..=2.0).contains(&duration) {
        return Err(Error::Invalid(format!(
            "token duration {duration} s outside [0.05, 2.0]"
        )));
    }
    Ok(())
}

/// Harmonic tone with a slowly varying envelope.
fn harmonic_tone<R: Rng>(n: usize, f0: f64, amps: &[f64], rng: &mut R) -> Vec<f64> {
    let phases: Vec<f64> = amps.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let mut x = vec![0.0; n];
    for (k, (&a, &ph)) in amps.iter().zip(&phases).enumerate() {
        let f = f0 * (k + 1) as f64;
        if f >= SR / 2.0 {
            break;
        }
        let w = 2.0 * PI * f / SR;
        for (i, v) in x.iter_mut().enumerate() {
            *v += a * (w * i as f64 + ph).sin();
        }
    }
    x
}

fn filler_like<R: Rng>(duration: f64, f0: f64, rng: &mut R) -> Vec<f64> {
    let n = samples_for(duration);
    let amps = [1.0, 0.45, 0.25, 0.15];
    let mut x = harmonic_tone(n, f0, &amps, rng);
    let fm = rng.gen_range(2.0..4.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    for (i, v) in x.iter_mut().enumerate() {
        *v *= 1.0 + 0.12 * (2.0 * PI * fm * i as f64 / SR + phase).sin();
    }
    let ramp = samples_for(rng.gen_range(0.02..0.05));
    apply_ramps(&mut x, ramp, ramp);
    normalize(&mut x, 0.8);
    x
}

/// Voiced burst with a pitch glide, a formant bump and spectral tilt `tilt`.
fn voiced_burst<R: Rng>(n: usize, f0: f64, tilt: f64, rng: &mut R) -> Vec<f64> {
    let f_start = f0 * rng.gen_range(0.85..1.15);
    let f_end = f0 * rng.gen_range(0.85..1.15);
    let formant = rng.gen_range(300.0..1200.0);
    let n_harm = ((SR / 2.0 - 200.0) / f0.max(f_start).max(f_end)).floor().min(24.0) as usize;
    let mut x = vec![0.0; n];
    for k in 1..=n_harm {
        let kf = k as f64;
        let amp = kf.powf(-tilt) * (1.0 + 2.5 * (-((kf * f0 - formant) / 200.0).powi(2)).exp());
        let mut phase = rng.gen_range(0.0..2.0 * PI);
        for (i, v) in x.iter_mut().enumerate() {
            let f = f_start + (f_end - f_start) * i as f64 / n.max(1) as f64;
            phase += 2.0 * PI * kf * f / SR;
            *v += amp * phase.sin();
        }
    }
    x
}

/// First-difference emphasised noise; `a` close to 1 tilts energy upward.
fn fricative<R: Rng>(n: usize, a: f64, rng: &mut R) -> Vec<f64> {
    let mut prev = 0.0;
    (0..n)
        .map(|_| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            let y = w - a * prev;
            prev = w;
            y
        })
        .collect()
}

fn word_like<R: Rng>(duration: f64, f0: f64, rng: &mut R) -> Vec<f64> {
    let n = samples_for(duration);
    let mut count = rng.gen_range(2..=4usize);
    let gap_len = |rng: &mut R| samples_for(rng.gen_range(0.02f64..0.05).min(duration * 0.15));
    let mut gaps: Vec<usize> = (0..count - 1).map(|_| gap_len(rng)).collect();
    let min_burst = samples_for(0.015);
    while count > 2 && n < gaps.iter().sum::<usize>() + count * min_burst * 2 {
        count -= 1;
        gaps.pop();
    }
    let voiced_total = n.saturating_sub(gaps.iter().sum());
    let weights: Vec<f64> = (0..count).map(|_| rng.gen_range(0.6..1.4)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut lens: Vec<usize> = weights
        .iter()
        .map(|w| ((w / wsum) * voiced_total as f64) as usize)
        .collect();
    let assigned: usize = lens.iter().sum::<usize>() + gaps.iter().sum::<usize>();
    *lens.last_mut().expect("at least two bursts") += n - assigned;

    let mut x = Vec::with_capacity(n);
    let mut last_tilt = f64::NAN;
    for (b, &len) in lens.iter().enumerate() {
        let mut tilt = rng.gen_range(0.3..2.2);
        while (tilt - last_tilt).abs() < 0.5 {
            tilt = rng.gen_range(0.3..2.2);
        }
        last_tilt = tilt;
        let mut burst = if rng.gen_bool(0.75) {
            voiced_burst(len, f0, tilt, rng)
        } else {
            fricative(len, 0.5 + 0.2 * tilt, rng)
        };
        normalize(&mut burst, rng.gen_range(0.7..1.0));
        let ramp = samples_for(rng.gen_range(0.003..0.008));
        apply_ramps(&mut burst, ramp, ramp);
        x.extend(burst);
        if let Some(&g) = gaps.get(b) {
            // Closures keep a weak murmur instead of dropping to silence.
            let mut murmur = voiced_burst(g, f0, 2.5, rng);
            normalize(&mut murmur, 0.3);
            x.extend(murmur);
        }
    }
    x.truncate(n);
    normalize(&mut x, 0.8);
    x
}

/// One token of the given kind at the working rate.
pub fn synth_tokens(kind: TokenKind, duration: f64, f0: f64, seed: u64) -> Result<AudioClip> {
    check_duration(duration)?;
    if !(f0 > 0.0 && f0 < SR / 8.0) {
        return Err(Error::Invalid(format!("f0 {f0} Hz out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = match kind {
        TokenKind::FillerLike => filler_like(duration, f0, &mut rng),
        TokenKind::WordLike => word_like(duration, f0, &mut rng),
    };
    Ok(to_clip(x))
}

/// A token placed inside an utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedToken {
    pub kind: TokenKind,
    pub start: f64,
    pub end: f64,
}

/// Sequence of word-like tokens (and occasional fillers) separated by
/// silent pauses, from one synthetic speaker with f0 in 90–220 Hz.
pub fn synth_utterance(duration: f64, seed: u64) -> (AudioClip, Vec<PlacedToken>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples_for(duration);
    let speaker_f0 = rng.gen_range(90.0..220.0);
    let mut x = vec![0.0; n];
    let mut tokens = Vec::new();
    let mut t = rng.gen_range(0.0..0.3);
    loop {
        let filler = rng.gen_bool(0.15);
        let d = if filler {
            rng.gen_range(0.2..0.7)
        } else {
            rng.gen_range(0.15..0.6)
        };
        if t + d > duration {
            break;
        }
        let kind = if filler {
            TokenKind::FillerLike
        } else {
            TokenKind::WordLike
        };
        let f0 = speaker_f0 * rng.gen_range(0.9..1.1);
        let tok = synth_tokens(kind, d, f0, rng.gen()).expect("duration and f0 in range");
        let gain = rng.gen_range(0.5..1.0);
        let start = samples_for(t);
        for (i, &v) in tok.samples.iter().enumerate() {
            if start + i < n {
                x[start + i] += gain * v as f64;
            }
        }
        tokens.push(PlacedToken {
            kind,
            start: t,
            end: t + d,
        });
        t += d + rng.gen_range(0.08..0.5);
    }
    (to_clip(x), tokens)
}

/// Stationary coloured noise: white noise through a one-pole filter with a
/// random pole, optionally with mains hum.
pub fn synth_background(duration: f64, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples_for(duration);
    let pole: f64 = rng.gen_range(-0.5..0.97);
    let hum = if rng.gen_bool(0.3) {
        Some((if rng.gen_bool(0.5) { 50.0 } else { 60.0 }, rng.gen_range(0.05..0.3)))
    } else {
        None
    };
    let mut y = 0.0;
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            y = pole * y + rng.gen_range(-1.0..1.0);
            let h = hum.map_or(0.0, |(f, a)| a * (2.0 * PI * f * i as f64 / SR).sin());
            y * (1.0 - pole.abs()).sqrt() + h
        })
        .collect();
    normalize(&mut x, 0.5);
    to_clip(x)
}

/// Short impulsive events: sharp attack, exponential decay, random band.
pub fn synth_foreground(duration: f64, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples_for(duration);
    let mut x = vec![0.0; n];
    let hits = rng.gen_range(1..=4usize);
    for _ in 0..hits {
        let at = rng.gen_range(0..n.max(1));
        let tau = rng.gen_range(0.01..0.08) * SR;
        let a = rng.gen_range(-0.9..0.9);
        let amp = rng.gen_range(0.4..1.0);
        let mut prev = 0.0;
        for (k, v) in x[at..].iter_mut().enumerate() {
            let w: f64 = rng.gen_range(-1.0..1.0);
            let s = w - a * prev;
            prev = w;
            let env = (-(k as f64) / tau).exp();
            if env < 1e-4 {
                break;
            }
            *v += amp * env * s;
        }
    }
    // Trim silence so the source span matches the sound.
    let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let first = x.iter().position(|v| v.abs() > 1e-3 * peak).unwrap_or(0);
    let last = x.iter().rposition(|v| v.abs() > 1e-3 * peak).unwrap_or(0);
    x.truncate(last + 1);
    x.drain(..first.min(last));
    normalize(&mut x, 0.8);
    to_clip(x)
}

/// Plucked-note melody with notes between 330 and 1300 Hz.
pub fn synth_music(duration: f64, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples_for(duration);
    let mut x = vec![0.0; n];
    let mut t = 0;
    while t < n {
        let len = samples_for(rng.gen_range(0.15..0.5));
        let voices = rng.gen_range(1..=2usize);
        for _ in 0..voices {
            let f = 330.0 * 2f64.powf(rng.gen_range(0..24) as f64 / 12.0);
            let decay = rng.gen_range(0.15..0.6) * SR;
            let amps = [1.0, 0.35, 0.15];
            let tone = harmonic_tone(len.min(n - t), f, &amps, &mut rng);
            for (k, v) in tone.iter().enumerate() {
                let attack = (k as f64 / (0.005 * SR)).min(1.0);
                x[t + k] += v * attack * (-(k as f64) / decay).exp();
            }
        }
        t += len;
    }
    normalize(&mut x, 0.7);
    to_clip(x)
}

/// Breath: low-passed noise under a slow swell.
pub fn synth_breath(duration: f64, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples_for(duration);
    let pole: f64 = rng.gen_range(0.3..0.8);
    let mut y = 0.0;
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            y = pole * y + rng.gen_range(-1.0..1.0);
            y * (PI * i as f64 / n as f64).sin().powi(2)
        })
        .collect();
    normalize(&mut x, 0.6);
    to_clip(x)
}

/// Laughter: rapid train of short high-pitched voiced pulses with
/// aspiration between them.
pub fn synth_laughter(duration: f64, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples_for(duration);
    let f0 = rng.gen_range(200.0..350.0);
    let mut x = vec![0.0; n];
    let mut t = 0;
    while t < n {
        let len = samples_for(rng.gen_range(0.06..0.12)).min(n - t);
        let mut pulse = voiced_burst(len, f0 * rng.gen_range(0.9..1.1), 1.2, &mut rng);
        for (v, w) in pulse.iter_mut().zip(fricative(len, 0.3, &mut rng)) {
            *v += 0.8 * w;
        }
        let r = len / 4;
        apply_ramps(&mut pulse, r, r);
        normalize(&mut pulse, 1.0);
        x[t..t + len].copy_from_slice(&pulse);
        t += len + samples_for(rng.gen_range(0.05..0.1));
    }
    normalize(&mut x, 0.8);
    to_clip(x)
}
