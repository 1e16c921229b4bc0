use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, FrameSeries};
use crate::error::{Error, Result};

/// Log-mel front end settings. Defaults: 64 HTK mel bands over 0-8 kHz,
/// 25 ms Hann window, 10 ms hop at 16 kHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    /// FFT length in samples; `None` picks the next power of two >= window.
    pub fft_size: Option<usize>,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_mels: 64,
            win_ms: 25.0,
            hop_ms: 10.0,
            fft_size: None,
            fmin: 0.0,
            fmax: 8_000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn win_samples(&self) -> usize {
        (self.win_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn n_fft(&self) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.win_samples().next_power_of_two())
    }

    pub fn frame_rate(&self) -> f64 {
        1000.0 / self.hop_ms
    }

    /// Frames produced for `len` samples: `ceil(len / hop)`.
    pub fn frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.hop_samples())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if !(self.hop_ms > 0.0) || self.hop_ms > self.win_ms {
            return bad(format!("hop {} ms must be in (0, win {} ms]", self.hop_ms, self.win_ms));
        }
        if self.hop_samples() == 0 {
            return bad("hop is shorter than one sample".into());
        }
        if self.fmax > self.sample_rate as f64 / 2.0 + 1e-9 || self.fmin < 0.0 || self.fmin >= self.fmax {
            return bad(format!(
                "band [{}, {}] Hz must lie within [0, {}]",
                self.fmin,
                self.fmax,
                self.sample_rate / 2
            ));
        }
        if self.n_fft() < self.win_samples() {
            return bad("fft size shorter than window".into());
        }
        if !(self.log_floor > 0.0) {
            return bad("log floor must be positive".into());
        }
        Ok(())
    }

    /// Centre frequency (Hz) of every mel band.
    pub fn center_frequencies(&self) -> Vec<f64> {
        let points = mel_points(self);
        points[1..=self.n_mels].iter().map(|&m| mel_to_hz(m)).collect()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn mel_points(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    (0..cfg.n_mels + 2)
        .map(|i| lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64)
        .collect()
}

/// Triangular filters, `n_mels` rows of `n_fft / 2 + 1` weights, unnormalised
/// (peak weight 1 at each band centre).
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f32>> {
    let n_fft = cfg.n_fft();
    let bins = n_fft / 2 + 1;
    let hz: Vec<f64> = mel_points(cfg).into_iter().map(mel_to_hz).collect();
    (0..cfg.n_mels)
        .map(|m| {
            let (left, centre, right) = (hz[m], hz[m + 1], hz[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * cfg.sample_rate as f64 / n_fft as f64;
                    let up = (f - left) / (centre - left);
                    let down = (right - f) / (right - centre);
                    up.min(down).max(0.0) as f32
                })
                .collect()
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    // Periodic Hann, as used for spectral analysis.
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    n_fft: usize,
    hop: usize,
}

impl Stft {
    fn new(cfg: &MelConfig) -> Self {
        let n_fft = cfg.n_fft();
        Self {
            fft: FftPlanner::new().plan_fft_forward(n_fft),
            window: hann(cfg.win_samples()),
            n_fft,
            hop: cfg.hop_samples(),
        }
    }

    /// Power spectrum of the frame centred on sample `centre`.
    fn frame_power(&self, x: &[f32], centre: i64, buf: &mut [Complex<f64>], out: &mut [f64]) {
        let win = self.window.len() as i64;
        let start = centre - win / 2;
        for c in buf.iter_mut() {
            *c = Complex::new(0.0, 0.0);
        }
        for (j, w) in self.window.iter().enumerate() {
            let idx = start + j as i64;
            if idx >= 0 && (idx as usize) < x.len() {
                buf[j] = Complex::new(x[idx as usize] as f64 * w, 0.0);
            }
        }
        self.fft.process(buf);
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = c.norm_sqr();
        }
    }
}

/// One-sided power spectrogram: `ceil(len / hop)` frames of `n_fft / 2 + 1`
/// bins, frame `i` centred on sample `i * hop` with zero padding at the edges.
pub fn stft_power(clip: &AudioClip, cfg: &MelConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let stft = Stft::new(cfg);
    let frames = cfg.frame_count(clip.len());
    let bins = stft.n_fft / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); stft.n_fft];
    let mut out = Vec::with_capacity(frames);
    for i in 0..frames {
        let mut p = vec![0.0; bins];
        stft.frame_power(&clip.samples, (i * stft.hop) as i64, &mut buf, &mut p);
        out.push(p);
    }
    Ok(out)
}

/// Log-mel spectrogram at `1000 / hop_ms` frames per second.
pub fn log_mel(clip: &AudioClip, cfg: &MelConfig) -> Result<FrameSeries> {
    cfg.validate()?;
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::Invalid(format!(
            "clip is {} Hz but the mel front end expects {} Hz",
            clip.sample_rate, cfg.sample_rate
        )));
    }
    let stft = Stft::new(cfg);
    let bank = mel_filterbank(cfg);
    // Sparse band support keeps the projection cheap.
    let support: Vec<(usize, usize)> = bank
        .iter()
        .map(|row| {
            let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = row.iter().rposition(|&w| w > 0.0).map_or(0, |l| l + 1);
            (first, last.max(first))
        })
        .collect();
    let frames = cfg.frame_count(clip.len());
    let bins = stft.n_fft / 2 + 1;
    let floor = cfg.log_floor;
    let mut buf = vec![Complex::new(0.0, 0.0); stft.n_fft];
    let mut power = vec![0.0; bins];
    let mut data = Vec::with_capacity(frames * cfg.n_mels);
    for i in 0..frames {
        stft.frame_power(&clip.samples, (i * stft.hop) as i64, &mut buf, &mut power);
        for (row, &(a, b)) in bank.iter().zip(&support) {
            let e: f64 = (a..b).map(|k| row[k] as f64 * power[k]).sum();
            data.push(e.max(floor).ln() as f32);
        }
    }
    FrameSeries::new(data, frames, cfg.n_mels, cfg.frame_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tone(freq: f64, n: usize) -> AudioClip {
        let s = (0..n)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()) as f32)
            .collect();
        AudioClip::new(s, 16_000).unwrap()
    }

    #[test]
    fn default_fft_is_512_for_400_sample_window() {
        let cfg = MelConfig::default();
        assert_eq!(cfg.win_samples(), 400);
        assert_eq!(cfg.hop_samples(), 160);
        assert_eq!(cfg.n_fft(), 512);
    }

    #[test]
    fn silence_maps_to_log_floor() {
        let cfg = MelConfig::default();
        let f = log_mel(&AudioClip::silence(0.5, 16_000), &cfg).unwrap();
        let expected = (1e-10f64).ln() as f32;
        assert!(f.data().iter().all(|&v| v == expected));
    }

    #[test]
    fn one_second_gives_100_by_64() {
        let f = log_mel(&AudioClip::silence(1.0, 16_000), &MelConfig::default()).unwrap();
        assert_eq!((f.frames(), f.dims()), (100, 64));
        assert_eq!(f.frame_rate, 100.0);
    }

    #[test]
    fn clip_shorter_than_window_gives_one_frame() {
        let f = log_mel(&tone(500.0, 100), &MelConfig::default()).unwrap();
        assert_eq!(f.frames(), 1);
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let c = AudioClip::silence(0.1, 8_000);
        assert!(log_mel(&c, &MelConfig::default()).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = MelConfig::default();
        c.n_mels = 0;
        assert!(c.validate().is_err());
        let mut c = MelConfig::default();
        c.hop_ms = 30.0;
        assert!(c.validate().is_err());
        let mut c = MelConfig::default();
        c.fmax = 9_000.0;
        assert!(c.validate().is_err());
    }

    /// Oracle: the band a tone lands in is found by projecting a directly
    /// computed DFT power spectrum (no FFT) onto the filterbank.
    fn direct_band_argmax(cfg: &MelConfig, freq: f64) -> usize {
        let n_fft = cfg.n_fft();
        let win = cfg.win_samples();
        let w = hann(win);
        let x: Vec<f64> = (0..win)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin() * w[i])
            .collect();
        let power: Vec<f64> = (0..=n_fft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in x.iter().enumerate() {
                    let ph = 2.0 * std::f64::consts::PI * (k * i) as f64 / n_fft as f64;
                    re += v * ph.cos();
                    im -= v * ph.sin();
                }
                re * re + im * im
            })
            .collect();
        let bank = mel_filterbank(cfg);
        let energies: Vec<f64> = bank
            .iter()
            .map(|r| r.iter().zip(&power).map(|(&a, b)| a as f64 * b).sum())
            .collect();
        argmax(&energies)
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &x)| if x > b.1 { (i, x) } else { b })
            .0
    }

    #[test]
    fn tone_at_band_centre_peaks_in_that_band() {
        let cfg = MelConfig::default();
        let centres = cfg.center_frequencies();
        let bin_hz = 16_000.0 / cfg.n_fft() as f64;
        let mut checked = 0;
        for (k, &fc) in centres.iter().enumerate() {
            // Bands narrower than ~2 FFT bins cannot resolve a single tone.
            let width = centres.get(k + 1).copied().unwrap_or(8_000.0) - fc;
            if width < 2.0 * bin_hz {
                continue;
            }
            assert_eq!(direct_band_argmax(&cfg, fc), k, "oracle disagrees at band {k}");
            let f = log_mel(&tone(fc, 8_000), &cfg).unwrap();
            let mean: Vec<f64> = (0..f.dims())
                .map(|d| (0..f.frames()).map(|i| f.get(i, d) as f64).sum::<f64>())
                .collect();
            assert_eq!(argmax(&mean), k, "band {k} at {fc:.1} Hz");
            checked += 1;
        }
        assert!(checked >= 40, "only {checked} bands resolvable");
    }

    #[test]
    fn stft_energy_matches_time_domain_for_white_noise() {
        let cfg = MelConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f32> = (0..32_000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let clip = AudioClip::new(x.clone(), 16_000).unwrap();
        let p = stft_power(&clip, &cfg).unwrap();
        let n_fft = cfg.n_fft();
        let spec_energy: f64 = p
            .iter()
            .map(|fr| {
                fr.iter()
                    .enumerate()
                    .map(|(k, &v)| if k == 0 || k == n_fft / 2 { v } else { 2.0 * v })
                    .sum::<f64>()
                    / n_fft as f64
            })
            .sum();
        let w2: f64 = hann(cfg.win_samples()).iter().map(|w| w * w).sum();
        let time_energy: f64 = x.iter().map(|&v| (v as f64).powi(2)).sum();
        let corrected = spec_energy * cfg.hop_samples() as f64 / w2;
        let rel = (corrected - time_energy).abs() / time_energy;
        assert!(rel < 0.05, "relative energy error {rel}");
    }

    #[test]
    fn one_hop_shift_shifts_frames_by_one() {
        let cfg = MelConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f32> = (0..8_000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut shifted = vec![0.0; cfg.hop_samples()];
        shifted.extend_from_slice(&x);
        let a = log_mel(&AudioClip::new(x, 16_000).unwrap(), &cfg).unwrap();
        let b = log_mel(&AudioClip::new(shifted, 16_000).unwrap(), &cfg).unwrap();
        for i in 2..a.frames() - 2 {
            for d in 0..a.dims() {
                assert!((a.get(i, d) - b.get(i + 1, d)).abs() < 1e-5);
            }
        }
    }
}
