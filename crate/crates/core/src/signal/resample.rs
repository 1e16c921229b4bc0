use super::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel on each side of the centre tap.
const ZERO_CROSSINGS: f64 = 24.0;
/// Fraction of the target Nyquist frequency kept by the anti-alias filter.
const ROLLOFF: f64 = 0.95;
const KAISER_BETA: f64 = 8.6;

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// The output holds `round(len * target / source)` samples. For rational
/// rate ratios the kernel is tabulated once per phase.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Invalid("target sample rate must be positive".into()));
    }
    let src = clip.sample_rate;
    if src == target_rate {
        return Ok(clip.clone());
    }
    let out_len =
        ((clip.len() as f64) * target_rate as f64 / src as f64).round() as usize;
    let g = gcd(src as u64, target_rate as u64);
    let up = target_rate as u64 / g; // phases per input sample
    let down = src as u64 / g;

    // Cutoff in cycles per input sample.
    let cutoff = 0.5 * (target_rate as f64 / src as f64).min(1.0) * ROLLOFF;
    let half_width = (ZERO_CROSSINGS / (2.0 * cutoff)).ceil() as i64;
    let taps = (2 * half_width + 1) as usize;

    let x = &clip.samples;
    let mut out = Vec::with_capacity(out_len);
    if up <= 4096 {
        // table[p][j]: weight of input sample (base - half_width + j) for phase p.
        let table: Vec<Vec<f32>> = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                (0..taps)
                    .map(|j| {
                        let d = (j as i64 - half_width) as f64 - frac;
                        kernel(d, cutoff, half_width as f64) as f32
                    })
                    .collect()
            })
            .collect();
        for n in 0..out_len as u64 {
            let pos = n * down;
            let base = (pos / up) as i64;
            let phase = (pos % up) as usize;
            out.push(convolve(x, base - half_width, &table[phase]));
        }
    } else {
        for n in 0..out_len {
            let t = n as f64 * src as f64 / target_rate as f64;
            let base = t.floor() as i64;
            let frac = t - base as f64;
            let mut acc = 0.0f64;
            for k in (base - half_width)..=(base + half_width) {
                if k >= 0 && (k as usize) < x.len() {
                    acc += x[k as usize] as f64 * kernel(k as f64 - base as f64 - frac, cutoff, half_width as f64);
                }
            }
            out.push(acc as f32);
        }
    }
    AudioClip::new(out, target_rate)
}

fn convolve(x: &[f32], first: i64, weights: &[f32]) -> f32 {
    let mut acc = 0.0f64;
    for (j, &w) in weights.iter().enumerate() {
        let k = first + j as i64;
        if k >= 0 && (k as usize) < x.len() {
            acc += x[k as usize] as f64 * w as f64;
        }
    }
    acc as f32
}

fn kernel(d: f64, cutoff: f64, half_width: f64) -> f64 {
    if d.abs() > half_width {
        return 0.0;
    }
    let arg = 2.0 * cutoff * d;
    let sinc = if arg.abs() < 1e-12 {
        1.0
    } else {
        (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
    };
    let r = d / half_width;
    let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(KAISER_BETA);
    2.0 * cutoff * sinc * window
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, n: usize) -> AudioClip {
        let s = (0..n)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()) as f32)
            .collect();
        AudioClip::new(s, rate).unwrap()
    }

    /// Magnitude of a single DFT bin, amplitude-normalised.
    fn dft_amp(x: &[f32], rate: u32, freq: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64;
            re += v as f64 * ph.cos();
            im -= v as f64 * ph.sin();
        }
        2.0 * (re * re + im * im).sqrt() / x.len() as f64
    }

    #[test]
    fn one_second_44k1_to_16k_has_16000_samples() {
        let c = AudioClip::silence(1.0, 44_100);
        let r = resample(&c, 16_000).unwrap();
        assert_eq!(r.len(), 16_000);
        assert_eq!(r.sample_rate, 16_000);
    }

    #[test]
    fn equal_rates_is_identity() {
        let c = sine(440.0, 16_000, 1234);
        assert_eq!(resample(&c, 16_000).unwrap(), c);
    }

    #[test]
    fn zero_target_rate_is_rejected() {
        assert!(resample(&AudioClip::silence(0.1, 16_000), 0).is_err());
    }

    #[test]
    fn sine_keeps_frequency_and_amplitude() {
        let c = sine(1000.0, 44_100, 44_100);
        let r = resample(&c, 16_000).unwrap();
        // Interior only, away from the zero-padded edges.
        let body = &r.samples[1000..15_000];
        // Dominant bin by direct DFT over a 10 Hz grid.
        let mut best = (0.0, 0.0);
        for k in 1..800 {
            let f = k as f64 * 10.0;
            let a = dft_amp(body, 16_000, f);
            if a > best.1 {
                best = (f, a);
            }
        }
        assert_eq!(best.0, 1000.0);
        assert!((best.1 - 0.5).abs() / 0.5 < 0.01, "amplitude {}", best.1);
    }

    #[test]
    fn content_above_target_nyquist_is_suppressed() {
        let c = sine(12_000.0, 44_100, 22_050);
        let r = resample(&c, 16_000).unwrap();
        assert!(r.rms() < 0.01 * c.rms(), "leak {}", r.rms());
    }

    #[test]
    fn upsampling_preserves_tone() {
        let c = sine(300.0, 8_000, 8_000);
        let r = resample(&c, 16_000).unwrap();
        assert_eq!(r.len(), 16_000);
        let a = dft_amp(&r.samples[2000..14_000], 16_000, 300.0);
        assert!((a - 0.5).abs() < 0.005);
    }
}
