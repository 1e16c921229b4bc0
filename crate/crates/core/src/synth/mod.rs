//! Synthetic data: soundscape mixing for VAD training with frame labels
//! from the clean speech, token generators, and fully synthetic episodes
//! with oracle transcripts for end-to-end evaluation.

mod corpus;
mod episode;
mod labels;
mod mix;
mod tokens;

pub use corpus::{
    check_leakage, generate_corpus, mixture_seed, read_manifest, read_source_manifest, synthesize_mixture,
    write_manifest, write_source_manifest, write_synthetic_sources, CorpusConfig, ManifestRow, SourceEntry,
    SourceKind, SourcePools, Split, SyntheticSourceConfig,
};
pub use episode::{synth_episode, Episode, EpisodeConfig, PlantedKind};
pub use labels::{label_speech_frames, FrameLabels, LABEL_RATE, SPEECH_FLOOR_DB};
pub use mix::{mix, MixResult, MixSpec, SnrConfig, SourceEvent, SourceRole, Stem, PEAK_LIMIT};
pub use tokens::{
    synth_background, synth_breath, synth_foreground, synth_laughter, synth_music, synth_tokens, synth_utterance,
    PlacedToken, TokenKind,
};
