use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mix::{mix, MixResult, MixSpec, SnrConfig};
use super::tokens::{synth_background, synth_foreground, synth_music, synth_utterance};
use crate::error::{Error, Result};
use crate::signal::{load_wav, resample, write_wav, AudioClip, WavFormat, WORKING_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Speech,
    Background,
    Foreground,
    Music,
}

/// Row of a source manifest (`path,role,split`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub path: String,
    pub role: SourceKind,
    pub split: Split,
}

/// Row of a mixture manifest (`path,label_path,split,duration_s,seed`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label_path: String,
    pub split: Split,
    pub duration_s: f64,
    pub seed: u64,
}

pub fn read_source_manifest(path: &Path) -> Result<Vec<SourceEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_source_manifest(path: &Path, entries: &[SourceEntry]) -> Result<()> {
    write_csv(path, entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    write_csv(path, rows)
}


fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Refuses source lists in which any clip is declared for both splits.
pub fn check_leakage(entries: &[SourceEntry], root: &Path) -> Result<()> {
    let key = |e: &SourceEntry| {
        let p = root.join(&e.path);
        p.canonicalize().unwrap_or(p)
    };
    let train: BTreeSet<PathBuf> = entries
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(key)
        .collect();
    for e in entries.iter().filter(|e| e.split == Split::Test) {
        if train.contains(&key(e)) {
            return Err(Error::Invalid(format!(
                "source {} is listed in both the train and test splits",
                e.path
            )));
        }
    }
    Ok(())
}

/// Loaded source clips of one split at the working rate.
#[derive(Debug, Clone, Default)]
pub struct SourcePools {
    pub speech: Vec<AudioClip>,
    pub background: Vec<AudioClip>,
    pub foreground: Vec<AudioClip>,
    pub music: Vec<AudioClip>,
}

impl SourcePools {
    fn push(&mut self, kind: SourceKind, clip: AudioClip) {
        match kind {
            SourceKind::Speech => self.speech.push(clip),
            SourceKind::Background => self.background.push(clip),
            SourceKind::Foreground => self.foreground.push(clip),
            SourceKind::Music => self.music.push(clip),
        }
    }

    /// Loads one split from a source manifest, resolving paths against `root`.
    pub fn load(entries: &[SourceEntry], root: &Path, split: Split) -> Result<Self> {
        let mut pools = Self::default();
        for e in entries.iter().filter(|e| e.split == split) {
            let clip = load_wav(root.join(&e.path))?;
            let clip = if clip.sample_rate == WORKING_RATE {
                clip
            } else {
                resample(&clip, WORKING_RATE)?
            };
            pools.push(e.role, clip);
        }
        Ok(pools)
    }
}

/// How many synthetic clips of each kind to generate per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSourceConfig {
    pub speech: usize,
    pub background: usize,
    pub foreground: usize,
    pub music: usize,
    pub speech_duration_s: f64,
}

impl Default for SyntheticSourceConfig {
    fn default() -> Self {
        Self {
            speech: 40,
            background: 10,
            foreground: 10,
            music: 8,
            speech_duration_s: 6.0,
        }
    }
}

fn synthetic_clip(kind: SourceKind, cfg: &SyntheticSourceConfig, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SourceKind::Speech => synth_utterance(cfg.speech_duration_s, seed).0,
        SourceKind::Background => synth_background(rng.gen_range(2.0..4.0), seed),
        SourceKind::Foreground => synth_foreground(rng.gen_range(0.2..1.0), seed),
        SourceKind::Music => synth_music(rng.gen_range(2.0..4.0), seed),
    }
}

const KINDS: [SourceKind; 4] = [
    SourceKind::Speech,
    SourceKind::Background,
    SourceKind::Foreground,
    SourceKind::Music,
];

fn clip_seed(seed: u64, split: Split, kind: SourceKind, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((split as u64) << 40) | ((kind as u64) << 32) | index as u64);
    rng.next_u64()
}

impl SourcePools {
    /// Generated sources; the two splits draw from disjoint seed streams.
    pub fn synthetic(cfg: &SyntheticSourceConfig, split: Split, seed: u64) -> Self {
        let mut pools = Self::default();
        for kind in KINDS {
            let count = match kind {
                SourceKind::Speech => cfg.speech,
                SourceKind::Background => cfg.background,
                SourceKind::Foreground => cfg.foreground,
                SourceKind::Music => cfg.music,
            };
            for i in 0..count {
                pools.push(kind, synthetic_clip(kind, cfg, clip_seed(seed, split, kind, i)));
            }
        }
        pools
    }
}

/// Writes generated sources under `dir/sources/` plus `dir/sources.csv`
/// (paths relative to `dir`) and returns the manifest entries.
pub fn write_synthetic_sources(dir: &Path, cfg: &SyntheticSourceConfig, seed: u64) -> Result<Vec<SourceEntry>> {
    let mut entries = Vec::new();
    for split in [Split::Train, Split::Test] {
        let sub = dir.join("sources").join(split.as_str());
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let pools = SourcePools::synthetic(cfg, split, seed);
        for (kind, clips) in [
            (SourceKind::Speech, &pools.speech),
            (SourceKind::Background, &pools.background),
            (SourceKind::Foreground, &pools.foreground),
            (SourceKind::Music, &pools.music),
        ] {
            for (i, clip) in clips.iter().enumerate() {
                let name = format!("{}_{i:04}.wav", serde_json::to_value(kind)?.as_str().unwrap_or("src"));
                write_wav(sub.join(&name), clip, WavFormat::Float32)?;
                entries.push(SourceEntry {
                    path: format!("sources/{}/{name}", split.as_str()),
                    role: kind,
                    split,
                });
            }
        }
    }
    write_source_manifest(&dir.join("sources.csv"), &entries)?;
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub duration_s: f64,
    pub snr: SnrConfig,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_test: 100,
            duration_s: 2.0,
            snr: SnrConfig::default(),
            seed: 0,
        }
    }
}

/// Seed of mixture `index`; train mixtures come first, then test.
pub fn mixture_seed(corpus_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed);
    rng.set_stream(index as u64 + 1);
    rng.next_u64()
}

/// Builds one mixture from a split's pools: a random excerpt of a random
/// speech clip (zero-padded when shorter) plus randomly drawn sources.
pub fn synthesize_mixture(pools: &SourcePools, cfg: &CorpusConfig, seed: u64) -> Result<MixResult> {
    if pools.speech.is_empty() {
        return Err(Error::Invalid("no speech sources in split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (cfg.duration_s * WORKING_RATE as f64).round() as usize;
    for _attempt in 0..16 {
        let src = &pools.speech[rng.gen_range(0..pools.speech.len())];
        let mut samples = vec![0.0f32; n];
        if src.samples.len() > n {
            let off = rng.gen_range(0..=src.samples.len() - n);
            samples.copy_from_slice(&src.samples[off..off + n]);
        } else {
            let off = rng.gen_range(0..=n - src.samples.len());
            samples[off..off + src.samples.len()].copy_from_slice(&src.samples);
        }
        let speech = AudioClip {
            samples,
            sample_rate: WORKING_RATE,
        };
        let events = cfg.snr.draw_events(
            cfg.duration_s,
            &pools.background,
            &pools.foreground,
            &pools.music,
            &mut rng,
        );
        if speech.peak() == 0.0 {
            // Excerpt fell into a pause; draw again.
            continue;
        }
        return mix(&MixSpec {
            speech: &speech,
            events,
            duration_s: cfg.duration_s,
            seed,
        });
    }
    Err(Error::Invalid("could not draw a non-silent speech excerpt".into()))
}

/// Writes `n_train + n_test` mixtures with label files and `manifest.csv`
/// under `out_dir`. Paths in the manifest are relative to `out_dir`.
pub fn generate_corpus(
    cfg: &CorpusConfig,
    train: &SourcePools,
    test: &SourcePools,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>> {
    cfg.snr.validate()?;
    if !(cfg.duration_s > 0.0) {
        return Err(Error::Invalid("mixture duration must be positive".into()));
    }
    let mut rows = Vec::with_capacity(cfg.n_train + cfg.n_test);
    for (split, pools, count, base) in [
        (Split::Train, train, cfg.n_train, 0),
        (Split::Test, test, cfg.n_test, cfg.n_train),
    ] {
        if count == 0 {
            continue;
        }
        let sub = out_dir.join(split.as_str());
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for i in 0..count {
            let seed = mixture_seed(cfg.seed, base + i);
            let m = synthesize_mixture(pools, cfg, seed)?;
            let name = format!("mix_{i:05}");
            let wav = format!("{}/{name}.wav", split.as_str());
            let lab = format!("{}/{name}.labels", split.as_str());
            write_wav(out_dir.join(&wav), &m.audio, WavFormat::Float32)?;
            m.labels.write(&out_dir.join(&lab))?;
            rows.push(ManifestRow {
                path: wav,
                label_path: lab,
                split,
                duration_s: cfg.duration_s,
                seed,
            });
        }
    }
    write_manifest(&out_dir.join("manifest.csv"), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSourceConfig {
        SyntheticSourceConfig {
            speech: 5,
            background: 2,
            foreground: 2,
            music: 1,
            speech_duration_s: 3.0,
        }
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let cfg = CorpusConfig {
            n_train: 10,
            n_test: 3,
            duration_s: 1.0,
            seed: 4,
            ..Default::default()
        };
        let train = SourcePools::synthetic(&small(), Split::Train, 1);
        let test = SourcePools::synthetic(&small(), Split::Test, 1);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let rows = generate_corpus(&cfg, &train, &test, a.path()).unwrap();
        generate_corpus(&cfg, &train, &test, b.path()).unwrap();
        assert_eq!(rows.iter().filter(|r| r.split == Split::Train).count(), 10);
        assert_eq!(std::fs::read_dir(a.path().join("train")).unwrap().count(), 20);
        let ma = std::fs::read(a.path().join("manifest.csv")).unwrap();
        assert_eq!(ma, std::fs::read(b.path().join("manifest.csv")).unwrap());
        assert_eq!(read_manifest(&a.path().join("manifest.csv")).unwrap(), rows);
        for r in &rows {
            assert_eq!(
                std::fs::read(a.path().join(&r.path)).unwrap(),
                std::fs::read(b.path().join(&r.path)).unwrap()
            );
        }
    }

    #[test]
    fn leaked_source_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = write_synthetic_sources(dir.path(), &small(), 2).unwrap();
        check_leakage(&entries, dir.path()).unwrap();
        let leaked = entries.iter().find(|e| e.split == Split::Test).unwrap().clone();
        entries.push(SourceEntry {
            split: Split::Train,
            ..leaked
        });
        assert!(check_leakage(&entries, dir.path()).is_err());
        let back = read_source_manifest(&dir.path().join("sources.csv")).unwrap();
        assert_eq!(back.len(), entries.len() - 1);
        let pools = SourcePools::load(&back, dir.path(), Split::Test).unwrap();
        assert_eq!(pools.speech.len(), 5);
    }
}
