//! Synthetic-corpus experiments: VAD training on mixtures, classifier
//! training on oracle-labelled candidates of synthetic episodes, and
//! scoring of both detection pipelines.

use std::path::{Path, PathBuf};

use fillerkit_core::candidates::generate_candidates;
use fillerkit_core::classifier::{
    event_examples, frame_examples, split_validation, train_event_classifier, train_frame_classifier,
    ClassifierModel, ClassifierTrainConfig, EventExample, FeatureInput, FrameExample, LabelSet, Variant,
};
use fillerkit_core::eval::{evaluate, pooled_pr_curve, EvalConfig, MetricsReport, PrPoint, Scores};
use fillerkit_core::event::{load_events, save_events, Event};
use fillerkit_core::nnet::TrainReport;
use fillerkit_core::pipeline::{detect_avc_from, detect_vc_from, DetectConfig, DetectionResult, EpisodeFeatures, Mode};
use fillerkit_core::signal::{features, load_feature_file, load_wav, write_wav, FrameSeries, MelConfig, WavFormat};
use fillerkit_core::synth::{
    mixture_seed, synth_episode, synthesize_mixture, CorpusConfig, Episode, EpisodeConfig, SourcePools, Split,
    SyntheticSourceConfig,
};
use fillerkit_core::transcripts::{parse_transcript, IntervalSet, TranscriptFormat};
use fillerkit_core::vad::{
    activations_to_intervals, frame_precision_recall, train_vad, vad_infer, VadExample, VadModel, VadTrainConfig,
};
use fillerkit_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::par_map;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VadRecipe {
    pub sources: SyntheticSourceConfig,
    pub corpus: CorpusConfig,
    pub train: VadTrainConfig,
}

impl Default for VadRecipe {
    fn default() -> Self {
        let mut train = VadTrainConfig::default();
        train.train.epochs = 10;
        Self {
            sources: SyntheticSourceConfig::default(),
            corpus: CorpusConfig::default(),
            train,
        }
    }
}

/// Mixtures of disjoint train and test source pools as VAD examples.
pub fn vad_corpus(recipe: &VadRecipe) -> Result<(Vec<VadExample>, Vec<VadExample>)> {
    let c = &recipe.corpus;
    let mel = MelConfig::default();
    let make = |split: Split, base: usize, n: usize| -> Result<Vec<VadExample>> {
        let pools = SourcePools::synthetic(&recipe.sources, split, c.seed);
        (0..n)
            .map(|i| {
                let m = synthesize_mixture(&pools, c, mixture_seed(c.seed, base + i))?;
                Ok(VadExample {
                    features: features(&m.audio, &mel)?,
                    labels: m.labels,
                })
            })
            .collect()
    };
    Ok((make(Split::Train, 0, c.n_train)?, make(Split::Test, c.n_train, c.n_test)?))
}

pub fn train_synthetic_vad(recipe: &VadRecipe) -> Result<(VadModel, TrainReport, Vec<VadExample>)> {
    let (train, test) = vad_corpus(recipe)?;
    let (vad, report) = train_vad(&train, &[], &recipe.train)?;
    Ok((vad, report, test))
}

/// Pooled frame precision and recall at `threshold`.
pub fn vad_precision_recall(vad: &VadModel, examples: &[VadExample], threshold: f64) -> Result<(f64, f64)> {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for e in examples {
        let act = vad_infer(vad, &e.features)?;
        let (a, b, c) = frame_precision_recall(&act, &e.labels, threshold);
        tp += a;
        fp += b;
        fneg += c;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok((ratio(tp, tp + fp), ratio(tp, tp + fneg)))
}

pub fn synth_episodes(prefix: &str, n: usize, cfg: &EpisodeConfig, seed: u64) -> Result<Vec<Episode>> {
    (0..n)
        .map(|i| synth_episode(&format!("{prefix}{i:04}"), cfg, mixture_seed(seed, i)))
        .collect()
}

/// An episode with its features and VAD activations computed once.
pub struct Prepared {
    pub episode: Episode,
    pub features: EpisodeFeatures,
    pub activations: FrameSeries,
}

/// Computes features and VAD activations on up to `jobs` threads. Without
/// a VAD, features use the default log-mel settings and activations are
/// empty, which is enough for frame-classifier training.
pub fn prepare(episodes: Vec<Episode>, vad: Option<&VadModel>, jobs: usize) -> Result<Vec<Prepared>> {
    let default_mel = MelConfig::default();
    let mel = vad.map_or(&default_mel, |v| &v.mel);
    let computed = par_map(&episodes, jobs, |ep| -> Result<(FrameSeries, FrameSeries)> {
        let f = features(&ep.audio, mel)?;
        let act = match vad {
            Some(v) => vad_infer(v, &f)?,
            None => FrameSeries::zeros(0, 1, f.frame_rate),
        };
        Ok((f, act))
    });
    episodes
        .into_iter()
        .zip(computed)
        .map(|(episode, c)| {
            let (f, activations) = c?;
            Ok(Prepared {
                features: EpisodeFeatures {
                    duration_s: episode.audio.duration(),
                    vad: f.clone(),
                    classifier: f,
                },
                activations,
                episode,
            })
        })
        .collect()
}

/// Label an annotator would give a candidate gap: that of the planted event
/// covering at least half of the gap or half of the event, else `None`.
pub fn oracle_label(gap: (f64, f64), events: &[Event]) -> Option<String> {
    events
        .iter()
        .map(|e| {
            let ov = (gap.1.min(e.end) - gap.0.max(e.start)).max(0.0);
            (ov / (gap.1 - gap.0).min(e.duration()), e)
        })
        .filter(|(frac, _)| *frac >= 0.5)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, e)| e.label.clone())
}

pub fn candidates_at(p: &Prepared, vad_threshold: f64) -> Result<IntervalSet> {
    let speech = activations_to_intervals(&p.activations, vad_threshold, 0.0, 0.0)?;
    let d = DetectConfig::default();
    Ok(generate_candidates(&speech, &p.episode.transcript, d.candidate_min_s, d.candidate_max_s))
}

/// Event-classifier examples: every VAD candidate an annotator could label,
/// plus a window centred on every planted event.
pub fn event_training_set(prepared: &[Prepared], vad_threshold: f64, label_set: LabelSet) -> Result<Vec<EventExample>> {
    let mut out = Vec::new();
    for p in prepared {
        let mut events: Vec<Event> = candidates_at(p, vad_threshold)?
            .spans()
            .iter()
            .filter_map(|&(a, b)| oracle_label((a, b), &p.episode.events).map(|l| Event::new(a, b, l, 1.0)))
            .collect();
        events.extend(p.episode.events.iter().cloned());
        out.extend(event_examples(&p.features.classifier, &events, label_set)?);
    }
    Ok(out)
}

/// Frame-classifier examples: each planted event at two random offsets,
/// plus windows centred on every third transcribed word.
pub fn frame_training_set(prepared: &[Prepared], label_set: LabelSet, seed: u64) -> Result<Vec<FrameExample>> {
    let mut out = Vec::new();
    for (i, p) in prepared.iter().enumerate() {
        let anchors: Vec<f64> = p
            .episode
            .transcript
            .words
            .iter()
            .step_by(3)
            .map(|w| 0.5 * (w.start + w.end))
            .collect();
        out.extend(frame_examples(
            &p.features.classifier,
            &p.episode.events,
            &anchors,
            label_set,
            2,
            mixture_seed(seed, i),
        )?);
    }
    Ok(out)
}

pub fn train_classifier(
    prepared: &[Prepared],
    variant: Variant,
    cfg: &ClassifierTrainConfig,
    vad_threshold: f64,
) -> Result<(ClassifierModel, TrainReport)> {
    let seed = cfg.train.seed;
    match variant {
        Variant::Event => {
            let set = event_training_set(prepared, vad_threshold, cfg.label_set)?;
            let (tr, va) = split_validation(&set, 0.1, seed);
            train_event_classifier(&tr, &va, cfg)
        }
        Variant::Frame => {
            let set = frame_training_set(prepared, cfg.label_set, seed)?;
            let (tr, va) = split_validation(&set, 0.1, seed);
            train_frame_classifier(&tr, &va, cfg)
        }
    }
}

pub fn detect_all(prepared: &[Prepared], mode: Mode, clf: &ClassifierModel, cfg: &DetectConfig) -> Result<Vec<DetectionResult>> {
    prepared
        .iter()
        .map(|p| match mode {
            Mode::Avc => detect_avc_from(&p.features, &p.activations, &p.episode.transcript, clf, cfg),
            Mode::Vc => detect_vc_from(&p.features, &p.activations, clf, cfg),
        })
        .collect()
}

/// Scores detections of `positive`-labelled reference events. Episodes are
/// laid end to end on one timeline so that segment and event metrics pool
/// across the corpus.
pub fn score(
    prepared: &[Prepared],
    results: &[DetectionResult],
    positive: &[&str],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    if prepared.len() != results.len() {
        return Err(Error::Invalid("one detection result per episode expected".into()));
    }
    let (mut refs, mut preds) = (Vec::new(), Vec::new());
    let mut offset = 0.0;
    for (p, r) in prepared.iter().zip(results) {
        let shift = |e: &Event, label: &str| Event::new(e.start + offset, e.end + offset, label, e.confidence);
        for e in p.episode.events.iter().filter(|e| positive.contains(&e.label.as_str())) {
            refs.push(shift(e, "filler"));
        }
        for e in r.events.iter().filter(|e| positive.contains(&e.label.as_str())) {
            preds.push(shift(e, "filler"));
        }
        // Whole seconds keep segment boundaries aligned within episodes.
        offset += p.features.duration_s.ceil();
    }
    let mut cfg = cfg.clone();
    cfg.total_dur = Some(offset);
    evaluate(&refs, &preds, &cfg)
}

pub fn pr_points(prepared: &[Prepared], results: &[DetectionResult], positive: &[&str], thresholds: &[f64]) -> Result<Vec<PrPoint>> {
    let eps: Vec<(Vec<Event>, FrameSeries)> = prepared
        .iter()
        .zip(results)
        .map(|(p, r)| (p.episode.events.clone(), r.frame_likelihoods.clone()))
        .collect();
    pooled_pr_curve(&eps, positive, thresholds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeRecipe {
    pub n_train: usize,
    pub n_test: usize,
    pub episode: EpisodeConfig,
    pub seed: u64,
}

impl Default for EpisodeRecipe {
    fn default() -> Self {
        Self {
            n_train: 300,
            n_test: 200,
            episode: EpisodeConfig::default(),
            seed: 11,
        }
    }
}

pub fn episode_splits(r: &EpisodeRecipe) -> Result<(Vec<Episode>, Vec<Episode>)> {
    Ok((
        synth_episodes("train", r.n_train, &r.episode, r.seed)?,
        synth_episodes("test", r.n_test, &r.episode, r.seed.wrapping_add(1))?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub name: String,
    pub audio: String,
    pub transcript: String,
    pub events: String,
    pub duration_s: f64,
}

/// Writes `<name>.wav`, `<name>.jsonl` (transcript) and `<name>.events.csv`
/// per episode, plus an `episodes.csv` index.
pub fn write_episodes(dir: &Path, episodes: &[Episode]) -> Result<Vec<EpisodeRow>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let row = EpisodeRow {
            name: ep.name.clone(),
            audio: format!("{}.wav", ep.name),
            transcript: format!("{}.jsonl", ep.name),
            events: format!("{}.events.csv", ep.name),
            duration_s: ep.audio.duration(),
        };
        write_wav(dir.join(&row.audio), &ep.audio, WavFormat::Float32)?;
        let t = dir.join(&row.transcript);
        std::fs::write(&t, ep.transcript.to_jsonl()).map_err(|e| Error::io(&t, e))?;
        save_events(dir.join(&row.events), &ep.events)?;
        rows.push(row);
    }
    let mut w = csv::Writer::from_path(dir.join("episodes.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(dir.join("episodes.csv"), e))?;
    Ok(rows)
}

pub fn read_episodes(dir: &Path) -> Result<Vec<Episode>> {
    let index = dir.join("episodes.csv");
    let mut r = csv::Reader::from_path(&index)?;
    let rows: Vec<EpisodeRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    rows.into_iter()
        .map(|row| {
            Ok(Episode {
                audio: load_wav(dir.join(&row.audio))?,
                transcript: parse_transcript(dir.join(&row.transcript), TranscriptFormat::Jsonl)?,
                events: load_events(dir.join(&row.events))?,
                name: row.name,
            })
        })
        .collect()
}

/// Replaces each episode's classifier features with `<dir>/<name>.feat`.
pub fn use_external_features(prepared: &mut [Prepared], dir: &Path) -> Result<()> {
    for p in prepared {
        let path = dir.join(format!("{}.feat", p.episode.name));
        if !path.exists() {
            return Err(Error::Invalid(format!("missing feature file {}", path.display())));
        }
        p.features.classifier = load_feature_file(&path)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineScores {
    pub event: Scores,
    pub segment: Scores,
    pub pr: Vec<PrPoint>,
}

pub const PR_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

pub fn pipeline_scores(
    prepared: &[Prepared],
    mode: Mode,
    clf: &ClassifierModel,
    det: &DetectConfig,
    eval: &EvalConfig,
) -> Result<(PipelineScores, Vec<DetectionResult>)> {
    let positive = clf.label_set.filler_labels();
    let results = detect_all(prepared, mode, clf, det)?;
    let m = score(prepared, &results, &positive, eval)?;
    let pr = pr_points(prepared, &results, &positive, &PR_THRESHOLDS)?;
    Ok((
        PipelineScores {
            event: m.event.overall,
            segment: m.segment.overall,
            pr,
        },
        results,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub vad_threshold: f64,
    pub speech_duration_s: f64,
    pub candidate_count: usize,
    pub candidate_duration_s: f64,
    pub avc: PipelineScores,
    pub vc: Option<PipelineScores>,
}

/// Detection quality and candidate volume per VAD threshold. The VAD runs
/// once per episode; only the thresholding changes.
pub fn ablate_vad_threshold(
    prepared: &[Prepared],
    thresholds: &[f64],
    event_clf: &ClassifierModel,
    frame_clf: Option<&ClassifierModel>,
    det: &DetectConfig,
    eval: &EvalConfig,
) -> Result<Vec<ThresholdRow>> {
    if prepared.is_empty() {
        return Err(Error::Invalid("threshold ablation needs at least one episode".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::Invalid("no VAD thresholds given".into()));
    }
    thresholds
        .iter()
        .map(|&t| {
            let det = DetectConfig {
                vad_threshold: t,
                ..det.clone()
            };
            let (avc, results) = pipeline_scores(prepared, Mode::Avc, event_clf, &det, eval)?;
            let vc = frame_clf
                .map(|f| pipeline_scores(prepared, Mode::Vc, f, &det, eval).map(|r| r.0))
                .transpose()?;
            Ok(ThresholdRow {
                vad_threshold: t,
                speech_duration_s: results.iter().map(|r| r.speech.duration()).sum(),
                candidate_count: results.iter().map(|r| r.candidates.len()).sum(),
                candidate_duration_s: results.iter().map(|r| r.candidates.duration()).sum(),
                avc,
                vc,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneRow {
    pub variant: Variant,
    pub features: String,
    pub parameters: usize,
    pub avc: PipelineScores,
    pub vc: PipelineScores,
}

/// Where a backbone comparison gets classifier features.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    LogMel,
    /// `<train_dir>/<name>.feat` for training episodes and
    /// `<test_dir>/<name>.feat` for test episodes.
    External { train_dir: PathBuf, test_dir: PathBuf },
}

impl FeatureSource {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureSource::LogMel => "logmel",
            FeatureSource::External { .. } => "external",
        }
    }
}

/// Trains every (head, features) combination with one seed and scores each
/// model inside both pipelines.
pub fn compare_backbones(
    train: &mut [Prepared],
    test: &mut [Prepared],
    sources: &[FeatureSource],
    cfg: &ClassifierTrainConfig,
    det: &DetectConfig,
    eval: &EvalConfig,
) -> Result<Vec<BackboneRow>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Invalid("backbone comparison needs train and test episodes".into()));
    }
    let logmel_train: Vec<FrameSeries> = train.iter().map(|p| p.features.vad.clone()).collect();
    let logmel_test: Vec<FrameSeries> = test.iter().map(|p| p.features.vad.clone()).collect();
    let mut rows = Vec::new();
    for src in sources {
        let mut cfg = cfg.clone();
        match src {
            FeatureSource::LogMel => {
                for (p, f) in train.iter_mut().zip(&logmel_train) {
                    p.features.classifier = f.clone();
                }
                for (p, f) in test.iter_mut().zip(&logmel_test) {
                    p.features.classifier = f.clone();
                }
                cfg.input = FeatureInput::LogMel;
            }
            FeatureSource::External { train_dir, test_dir } => {
                use_external_features(train, train_dir)?;
                use_external_features(test, test_dir)?;
                cfg.input = FeatureInput::External;
            }
        }
        for variant in [Variant::Event, Variant::Frame] {
            let (clf, _) = train_classifier(train, variant, &cfg, det.vad_threshold)?;
            let (avc, _) = pipeline_scores(test, Mode::Avc, &clf, det, eval)?;
            let (vc, _) = pipeline_scores(test, Mode::Vc, &clf, det, eval)?;
            rows.push(BackboneRow {
                variant,
                features: src.name().to_string(),
                parameters: clf.model.param_count(),
                avc,
                vc,
            });
        }
    }
    Ok(rows)
}
