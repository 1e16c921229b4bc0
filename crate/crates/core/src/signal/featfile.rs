//! `FEAT1 <frames> <dims> <frame_rate_hz>\n` followed by little-endian f32
//! values in frame-major order.

use std::io::{Read, Write};
use std::path::Path;

use super::FrameSeries;
use crate::error::{Error, Result};

const MAGIC: &str = "FEAT1";

pub fn write_feature_file<W: Write>(mut w: W, series: &FrameSeries) -> std::io::Result<()> {
    writeln!(
        w,
        "{MAGIC} {} {} {}",
        series.frames(),
        series.dims(),
        series.frame_rate
    )?;
    let mut bytes = Vec::with_capacity(series.data().len() * 4);
    for v in series.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

pub fn save_feature_file(path: impl AsRef<Path>, series: &FrameSeries) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_feature_file(&mut w, series)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_feature_file<R: Read>(mut r: R) -> Result<FrameSeries> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Malformed(format!("feature file: {e}")))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Malformed("feature file: missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Malformed("feature file: header is not text".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != MAGIC {
        return Err(Error::Malformed(format!("feature file: bad header {header:?}")));
    }
    let parse_usize = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Malformed(format!("feature file: bad count {s:?}")))
    };
    let frames = parse_usize(parts[1])?;
    let dims = parse_usize(parts[2])?;
    let rate: f64 = parts[3]
        .parse()
        .map_err(|_| Error::Malformed(format!("feature file: bad frame rate {:?}", parts[3])))?;
    let payload = &bytes[nl + 1..];
    let expected = frames
        .checked_mul(dims)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Shape("feature file: declared size overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::Shape(format!(
            "feature file declares {frames} x {dims} ({expected} bytes) but holds {} bytes",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FrameSeries::new(data, frames, dims, rate)
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<FrameSeries> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_file(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_echoed() {
        let s = FrameSeries::zeros(100, 512, 100.0);
        let mut buf = Vec::new();
        write_feature_file(&mut buf, &s).unwrap();
        assert!(buf.starts_with(b"FEAT1 100 512 100\n"));
        let back = read_feature_file(&buf[..]).unwrap();
        assert_eq!((back.frames(), back.dims(), back.frame_rate), (100, 512, 100.0));
    }

    #[test]
    fn truncated_payload_is_shape_error() {
        let s = FrameSeries::zeros(10, 4, 100.0);
        let mut buf = Vec::new();
        write_feature_file(&mut buf, &s).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_feature_file(&buf[..]), Err(Error::Shape(_))));
    }

    #[test]
    fn nan_payload_is_rejected() {
        let mut buf = b"FEAT1 1 1 100\n".to_vec();
        buf.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_feature_file(&buf[..]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn bad_magic_is_malformed() {
        assert!(matches!(
            read_feature_file(&b"FEAT2 1 1 100\n\0\0\0\0"[..]),
            Err(Error::Malformed(_))
        ));
    }

    proptest! {
        #[test]
        fn round_trip_preserves_matrix(
            frames in 0usize..20,
            dims in 1usize..8,
            rate in prop::sample::select(vec![10.0, 100.0, 62.5]),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..frames * dims).map(|_| rng.gen_range(-1e3..1e3)).collect();
            let s = FrameSeries::new(data, frames, dims, rate).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("x.feat");
            save_feature_file(&p, &s).unwrap();
            prop_assert_eq!(load_feature_file(&p).unwrap(), s);
        }
    }
}
