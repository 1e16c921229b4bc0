use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

/// Reads a PCM16 or float32 WAV file. Multi-channel audio is averaged down
/// to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(msg) => Error::Malformed(format!("{}: {msg}", path.display())),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Malformed(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{}: {bits}-bit {fmt:?}",
                path.display()
            )))
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|fr| fr.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    AudioClip::new(samples, spec.sample_rate)
}

fn wav_spec(sample_rate: u32, format: WavFormat) -> WavSpec {
    match format {
        WavFormat::Pcm16 => WavSpec {
            channels: 1,
            sample_rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavFormat::Float32 => WavSpec {
            channels: 1,
            sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    }
}

fn write_samples<W: std::io::Write + std::io::Seek>(
    mut writer: WavWriter<W>,
    clip: &AudioClip,
    format: WavFormat,
) -> Result<()> {
    match format {
        WavFormat::Pcm16 => {
            for &s in &clip.samples {
                let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0);
                writer.write_sample(v as i16)?;
            }
        }
        WavFormat::Float32 => {
            for &s in &clip.samples {
                writer.write_sample(s)?;
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let writer = WavWriter::create(path, wav_spec(clip.sample_rate, format)).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    write_samples(writer, clip, format)
}

/// Encodes a clip as an in-memory WAV file.
pub fn wav_bytes(clip: &AudioClip, format: WavFormat) -> Result<Vec<u8>> {
    let mut cursor = std::io::Cursor::new(Vec::new());
    let writer = WavWriter::new(&mut cursor, wav_spec(clip.sample_rate, format))?;
    write_samples(writer, clip, format)?;
    Ok(cursor.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn silence_pcm16_loads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_wav(&p, &AudioClip::silence(1.0, 44_100), WavFormat::Pcm16).unwrap();
        let c = load_wav(&p).unwrap();
        assert_eq!(c.sample_rate, 44_100);
        assert_eq!(c.len(), 44_100);
        assert!(c.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stereo_opposite_channels_average_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for _ in 0..1000 {
            w.write_sample(16384i16).unwrap();
            w.write_sample(-16384i16).unwrap();
        }
        w.finalize().unwrap();
        let c = load_wav(&p).unwrap();
        assert_eq!(c.len(), 1000);
        assert!(c.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn float_round_trip_is_bit_identical() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f32> = (0..5000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let clip = AudioClip::new(samples, 16_000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.wav");
        write_wav(&p, &clip, WavFormat::Float32).unwrap();
        let back = load_wav(&p).unwrap();
        assert_eq!(clip.samples.len(), back.samples.len());
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn pcm16_round_trip_on_grid_values() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<f32> = (0..2000)
            .map(|_| rng.gen_range(-32768i32..32767) as f32 / 32768.0)
            .collect();
        let clip = AudioClip::new(samples, 8_000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r16.wav");
        write_wav(&p, &clip, WavFormat::Pcm16).unwrap();
        assert_eq!(load_wav(&p).unwrap().samples, clip.samples);
    }

    #[test]
    fn garbage_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"RIFX not a wave file at all").unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Malformed(_))));
    }

    #[test]
    fn unsupported_bit_depth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(100i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p), Err(Error::UnsupportedEncoding(_))));
    }
}
