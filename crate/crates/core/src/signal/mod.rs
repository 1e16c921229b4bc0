//! Audio containers, WAV I/O, resampling and spectral features.
//!
//! Everything downstream works on two carriers: [`AudioClip`] (mono
//! samples plus a rate) and [`FrameSeries`] (a frames x dims matrix with an
//! explicit frame rate and the time of frame 0).

mod augment;
mod featfile;
mod mel;
mod norm;
mod resample;
mod wav;

pub use augment::{spec_augment, SpecAugmentConfig};
pub use featfile::{load_feature_file, read_feature_file, save_feature_file, write_feature_file};
pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, stft_power, MelConfig};
pub use norm::Normalizer;
pub use resample::resample;
pub use wav::{load_wav, wav_bytes, write_wav, WavFormat};

use crate::error::{Error, Result};

/// Working sample rate of every model in the crate.
pub const WORKING_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Invalid("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(duration_s: f64, sample_rate: u32) -> Self {
        let n = (duration_s * sample_rate as f64).round() as usize;
        Self {
            samples: vec![0.0; n],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    /// Sample index of time `t` (seconds), rounded to nearest.
    pub fn index_of(&self, t: f64) -> usize {
        (t * self.sample_rate as f64).round().max(0.0) as usize
    }

    /// Copy of `[start, end)` seconds; regions outside the clip are zero.
    pub fn slice_padded(&self, start: f64, end: f64) -> AudioClip {
        let sr = self.sample_rate as f64;
        let a = (start * sr).round() as i64;
        let b = (end * sr).round() as i64;
        let samples = (a..b)
            .map(|i| {
                if i >= 0 && (i as usize) < self.samples.len() {
                    self.samples[i as usize]
                } else {
                    0.0
                }
            })
            .collect();
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Index into `0..len` reflecting at both ends, repeating for offsets
/// beyond one period.
pub fn reflect_index(i: i64, len: usize) -> usize {
    let n = len as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let e: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (e / samples.len() as f64).sqrt()
}

/// Time-indexed matrix: row `i` is the frame centred at
/// `origin_offset + i / frame_rate` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    data: Vec<f32>,
    frames: usize,
    dims: usize,
    pub frame_rate: f64,
    pub origin_offset: f64,
}

impl FrameSeries {
    pub fn new(data: Vec<f32>, frames: usize, dims: usize, frame_rate: f64) -> Result<Self> {
        if !(frame_rate > 0.0) || !frame_rate.is_finite() {
            return Err(Error::Invalid(format!("frame rate {frame_rate} must be positive")));
        }
        if data.len() != frames * dims {
            return Err(Error::Shape(format!(
                "{} values for {frames} frames x {dims} dims",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "frame {} dim {} is not finite",
                i / dims.max(1),
                i % dims.max(1)
            )));
        }
        Ok(Self {
            data,
            frames,
            dims,
            frame_rate,
            origin_offset: 0.0,
        })
    }

    pub fn zeros(frames: usize, dims: usize, frame_rate: f64) -> Self {
        Self {
            data: vec![0.0; frames * dims],
            frames,
            dims,
            frame_rate,
            origin_offset: 0.0,
        }
    }

    pub fn with_origin(mut self, origin_offset: f64) -> Self {
        self.origin_offset = origin_offset;
        self
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn get(&self, frame: usize, dim: usize) -> f32 {
        self.data[frame * self.dims + dim]
    }

    pub fn time_of(&self, frame: usize) -> f64 {
        self.origin_offset + frame as f64 / self.frame_rate
    }

    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    /// Rows `[start, start + count)` with out-of-range indices mirrored
    /// back into the series (`-1 -> 0`, `frames -> frames - 1`).
    pub fn window_reflect(&self, start: i64, count: usize) -> FrameSeries {
        let mut data = Vec::with_capacity(count * self.dims);
        for i in start..start + count as i64 {
            data.extend_from_slice(self.row(reflect_index(i, self.frames)));
        }
        FrameSeries {
            data,
            frames: count,
            dims: self.dims,
            frame_rate: self.frame_rate,
            origin_offset: self.origin_offset + start as f64 / self.frame_rate,
        }
    }

    /// Values laid out dims-major (`[dims, frames]`), as network input.
    pub fn to_channels_first(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.frames {
            for (d, &v) in self.row(i).iter().enumerate() {
                out[d * self.frames + i] = v as f64;
            }
        }
        out
    }

    /// Rows `[start, start + count)` where out-of-range rows are filled with
    /// `fill`.
    pub fn window(&self, start: i64, count: usize, fill: f32) -> FrameSeries {
        let mut data = Vec::with_capacity(count * self.dims);
        for i in start..start + count as i64 {
            if i >= 0 && (i as usize) < self.frames {
                data.extend_from_slice(self.row(i as usize));
            } else {
                data.extend(std::iter::repeat(fill).take(self.dims));
            }
        }
        FrameSeries {
            data,
            frames: count,
            dims: self.dims,
            frame_rate: self.frame_rate,
            origin_offset: self.origin_offset + start as f64 / self.frame_rate,
        }
    }
}

/// Log-mel features, resampling the clip to the front end's rate first.
pub fn features(clip: &AudioClip, cfg: &MelConfig) -> Result<FrameSeries> {
    if clip.sample_rate == cfg.sample_rate {
        log_mel(clip, cfg)
    } else {
        log_mel(&resample(clip, cfg.sample_rate)?, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let v: Vec<usize> = (-3..8).map(|i| reflect_index(i, 3)).collect();
        assert_eq!(v, vec![2, 1, 0, 0, 1, 2, 2, 1, 0, 0, 1]);
    }

    #[test]
    fn reflected_window_and_layout() {
        let s = FrameSeries::new(vec![0., 10., 1., 11., 2., 12.], 3, 2, 100.0).unwrap();
        let w = s.window_reflect(-1, 5);
        assert_eq!(w.data(), &[0., 10., 0., 10., 1., 11., 2., 12., 2., 12.]);
        assert!((w.origin_offset + 0.01).abs() < 1e-12);
        assert_eq!(s.to_channels_first(), vec![0., 1., 2., 10., 11., 12.]);
    }

    #[test]
    fn normalizer_standardises_bands() {
        let s = FrameSeries::new(vec![1., 5., 3., 5., 5., 5.], 3, 2, 100.0).unwrap();
        let n = Normalizer::fit([&s]).unwrap();
        assert_eq!(n.mean, vec![3.0, 5.0]);
        let z = n.apply(&s).unwrap();
        assert!((z.get(0, 0) + 1.2247449).abs() < 1e-5);
        // A constant band keeps a floor on its scale instead of dividing by zero.
        assert_eq!(z.get(1, 1), 0.0);
    }
}
