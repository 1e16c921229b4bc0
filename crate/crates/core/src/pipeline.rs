//! End-to-end detection. AVC: VAD speech minus transcript words gives
//! candidate gaps, each classified from the 1 s window at its midpoint.
//! VC: no transcript; every VAD interval is scanned by the frame
//! classifier in 1 s windows with a 0.5 s hop.
//!
//! Both pipelines accept either classifier head: AVC averages a frame
//! model's outputs over the candidate, and VC spreads an event model's
//! single posterior over its window's ten frames.

use serde::{Deserialize, Serialize};

use crate::candidates::{generate_candidates, MAX_DUR, MIN_DUR};
use crate::classifier::{
    centered_start, frames_to_events, window_origin, ClassifierModel, FeatureInput, Variant, FRAME_RATE, OUTPUT_FRAMES,
};
use crate::error::{Error, Result};
use crate::event::{sort_events, Event};
use crate::nnet::Tensor;
use crate::signal::{self, AudioClip, FrameSeries};
use crate::transcripts::{IntervalSet, Transcript};
use crate::vad::{activations_to_intervals, vad_infer, VadModel, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Avc,
    Vc,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avc" => Ok(Mode::Avc),
            "vc" => Ok(Mode::Vc),
            _ => Err(Error::Invalid(format!("unknown detection mode '{s}' (avc or vc)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub vad_threshold: f64,
    pub clf_threshold: f64,
    pub min_gap_s: f64,
    pub min_speech_s: f64,
    pub candidate_min_s: f64,
    pub candidate_max_s: f64,
    /// Hop between VC windows, in seconds; a multiple of 0.1.
    pub vc_hop_s: f64,
    pub min_event_dur: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            vad_threshold: DEFAULT_THRESHOLD,
            clf_threshold: 0.5,
            min_gap_s: 0.0,
            min_speech_s: 0.0,
            candidate_min_s: MIN_DUR,
            candidate_max_s: MAX_DUR,
            vc_hop_s: 0.5,
            min_event_dur: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub mode: Mode,
    pub events: Vec<Event>,
    /// Filler posterior per 10 Hz frame; 0 where nothing was classified.
    pub frame_likelihoods: FrameSeries,
    pub speech: IntervalSet,
    /// AVC candidate gaps; empty for VC.
    pub candidates: IntervalSet,
    pub config: DetectConfig,
}

/// Features for each model, computed once from the audio.
pub struct EpisodeFeatures {
    pub duration_s: f64,
    pub vad: FrameSeries,
    pub classifier: FrameSeries,
}

impl EpisodeFeatures {
    /// Log-mel features for both models; an error for classifiers that
    /// read external features, see [`EpisodeFeatures::with_external`].
    pub fn compute(audio: &AudioClip, vad: &VadModel, clf: &ClassifierModel) -> Result<Self> {
        if clf.input == FeatureInput::External {
            return Err(Error::Invalid(
                "the classifier reads external features; supply a feature file".into(),
            ));
        }
        let v = signal::features(audio, &vad.mel)?;
        let c = if clf.mel == vad.mel {
            v.clone()
        } else {
            signal::features(audio, &clf.mel)?
        };
        Ok(Self {
            duration_s: audio.duration(),
            vad: v,
            classifier: c,
        })
    }

    pub fn with_external(audio: &AudioClip, vad: &VadModel, classifier: FrameSeries) -> Result<Self> {
        Ok(Self {
            duration_s: audio.duration(),
            vad: signal::features(audio, &vad.mel)?,
            classifier,
        })
    }
}

/// Classes whose posteriors add up to the filler likelihood.
fn filler_indices(clf: &ClassifierModel) -> Vec<usize> {
    clf.label_set
        .filler_labels()
        .iter()
        .filter_map(|l| clf.label_set.index_of(l))
        .collect()
}

/// Ten rows of `k` posteriors for window `n` of a batch. An event model's
/// single posterior is repeated across the ten frames.
fn frame_posteriors(clf: &ClassifierModel, post: &Tensor, n: usize) -> Vec<f64> {
    let k = clf.labels().len();
    match clf.variant {
        Variant::Event => post.data()[n * k..(n + 1) * k].repeat(OUTPUT_FRAMES),
        Variant::Frame => {
            let y = &post.data()[n * k * OUTPUT_FRAMES..(n + 1) * k * OUTPUT_FRAMES];
            let mut rows = vec![0.0; k * OUTPUT_FRAMES];
            for c in 0..k {
                for f in 0..OUTPUT_FRAMES {
                    rows[f * k + c] = y[c * OUTPUT_FRAMES + f];
                }
            }
            rows
        }
    }
}

/// Posterior of the span `(a, b)` from window `n`, whose first frame starts
/// at `origin`. A frame model averages the frames centred inside the span,
/// or takes the frame nearest its midpoint when none is.
fn clip_posterior(clf: &ClassifierModel, post: &Tensor, n: usize, origin: f64, (a, b): (f64, f64)) -> Vec<f64> {
    let k = clf.labels().len();
    if clf.variant == Variant::Event {
        return post.data()[n * k..(n + 1) * k].to_vec();
    }
    let rows = frame_posteriors(clf, post, n);
    let centre = |f: usize| origin + (f as f64 + 0.5) / FRAME_RATE;
    let mut inside: Vec<usize> = (0..OUTPUT_FRAMES).filter(|&f| a <= centre(f) && centre(f) <= b).collect();
    if inside.is_empty() {
        let mid = 0.5 * (a + b);
        let nearest = (0..OUTPUT_FRAMES)
            .min_by(|&x, &y| (centre(x) - mid).abs().total_cmp(&(centre(y) - mid).abs()))
            .expect("windows have frames");
        inside.push(nearest);
    }
    let mut p = vec![0.0; k];
    for &f in &inside {
        for (acc, v) in p.iter_mut().zip(&rows[f * k..(f + 1) * k]) {
            *acc += v / inside.len() as f64;
        }
    }
    p
}

/// Class posteriors for each span of `features`, each from a 1 s window
/// centred on the span, using the same per-span rule as AVC detection.
pub fn classify_spans(clf: &ClassifierModel, features: &FrameSeries, spans: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
    if spans.is_empty() {
        return Ok(Vec::new());
    }
    let starts: Vec<i64> = spans.iter().map(|&(a, b)| centered_start(features, 0.5 * (a + b))).collect();
    let windows: Vec<Tensor> = starts.iter().map(|&s| clf.window(features, s)).collect::<Result<_>>()?;
    let post = clf.predict(&windows)?;
    Ok(spans
        .iter()
        .enumerate()
        .map(|(n, &span)| clip_posterior(clf, &post, n, window_origin(features, starts[n]), span))
        .collect())
}

fn likelihood_grid(duration_s: f64) -> FrameSeries {
    FrameSeries::zeros((duration_s * FRAME_RATE).ceil() as usize, 1, FRAME_RATE)
}

pub fn detect_avc(
    audio: &AudioClip,
    transcript: Option<&Transcript>,
    vad: &VadModel,
    clf: &ClassifierModel,
    cfg: &DetectConfig,
) -> Result<DetectionResult> {
    let transcript = transcript.ok_or_else(|| {
        Error::Invalid("AVC detection needs a transcript; use VC mode (detect_vc) for transcript-free audio".into())
    })?;
    detect(Mode::Avc, &EpisodeFeatures::compute(audio, vad, clf)?, Some(transcript), vad, clf, cfg)
}

pub fn detect_vc(audio: &AudioClip, vad: &VadModel, clf: &ClassifierModel, cfg: &DetectConfig) -> Result<DetectionResult> {
    detect(Mode::Vc, &EpisodeFeatures::compute(audio, vad, clf)?, None, vad, clf, cfg)
}

/// Runs the VAD over `feats` and then the chosen pipeline.
pub fn detect(
    mode: Mode,
    feats: &EpisodeFeatures,
    transcript: Option<&Transcript>,
    vad: &VadModel,
    clf: &ClassifierModel,
    cfg: &DetectConfig,
) -> Result<DetectionResult> {
    let act = vad_infer(vad, &feats.vad)?;
    match (mode, transcript) {
        (Mode::Avc, Some(t)) => detect_avc_from(feats, &act, t, clf, cfg),
        (Mode::Avc, None) => Err(Error::Invalid(
            "AVC detection needs a transcript; use VC mode (detect_vc) for transcript-free audio".into(),
        )),
        (Mode::Vc, _) => detect_vc_from(feats, &act, clf, cfg),
    }
}

/// AVC on precomputed features and VAD activations, so threshold sweeps
/// reuse one VAD pass.
pub fn detect_avc_from(
    feats: &EpisodeFeatures,
    activations: &FrameSeries,
    transcript: &Transcript,
    clf: &ClassifierModel,
    cfg: &DetectConfig,
) -> Result<DetectionResult> {
    let speech = activations_to_intervals(activations, cfg.vad_threshold, cfg.min_gap_s, cfg.min_speech_s)?
        .clamp(0.0, feats.duration_s);
    let candidates = generate_candidates(&speech, transcript, cfg.candidate_min_s, cfg.candidate_max_s);
    let labels = clf.labels();
    let filler = filler_indices(clf);
    let posteriors = classify_spans(clf, &feats.classifier, candidates.spans())?;
    let mut lik = likelihood_grid(feats.duration_s);
    let mut events = Vec::new();
    for (p, &(a, b)) in posteriors.iter().zip(candidates.spans()) {
        let conf: f64 = filler.iter().map(|&i| p[i]).sum();
        for f in 0..lik.frames() {
            let c = (f as f64 + 0.5) / FRAME_RATE;
            if a <= c && c <= b {
                lik.row_mut(f)[0] = conf as f32;
            }
        }
        if conf >= cfg.clf_threshold {
            let best = *filler
                .iter()
                .max_by(|&&x, &&y| p[x].total_cmp(&p[y]).then(y.cmp(&x)))
                .expect("every label set has a filler class");
            events.push(Event::new(a, b, labels[best], conf));
        }
    }
    Ok(DetectionResult {
        mode: Mode::Avc,
        events,
        frame_likelihoods: lik,
        speech,
        candidates,
        config: cfg.clone(),
    })
}

/// 10 Hz window starts covering grid frames `[i0, i1)`: every `hop`
/// frames from `i0`, plus one window flush with `i1` if the regular hops
/// stop short of it.
pub fn vc_window_starts(i0: usize, i1: usize, hop: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = i0;
    loop {
        starts.push(s);
        if s + OUTPUT_FRAMES >= i1 {
            break;
        }
        if s + hop + OUTPUT_FRAMES > i1 {
            starts.push(i1 - OUTPUT_FRAMES);
            break;
        }
        s += hop;
    }
    starts
}

pub fn detect_vc_from(
    feats: &EpisodeFeatures,
    activations: &FrameSeries,
    clf: &ClassifierModel,
    cfg: &DetectConfig,
) -> Result<DetectionResult> {
    let hop = (cfg.vc_hop_s * FRAME_RATE).round() as usize;
    if hop == 0 || ((hop as f64) / FRAME_RATE - cfg.vc_hop_s).abs() > 1e-9 {
        return Err(Error::Invalid(format!("VC hop {} s is not a positive multiple of 0.1 s", cfg.vc_hop_s)));
    }
    let speech = activations_to_intervals(activations, cfg.vad_threshold, cfg.min_gap_s, cfg.min_speech_s)?
        .clamp(0.0, feats.duration_s);
    let labels = clf.labels();
    let k = labels.len();
    let background = clf.background_index();
    let filler = filler_indices(clf);
    let mut lik = likelihood_grid(feats.duration_s);

    // (interval, grid range, window starts) for every interval, then one
    // batched forward pass over all windows.
    let mut plan = Vec::new();
    let mut windows = Vec::new();
    for &(a, b) in speech.spans() {
        let i0 = (a * FRAME_RATE + 1e-9).floor() as usize;
        let i1 = ((b * FRAME_RATE - 1e-9).ceil() as usize).max(i0 + 1);
        let starts = vc_window_starts(i0, i1, hop);
        for &s in &starts {
            let t = s as f64 / FRAME_RATE - feats.classifier.origin_offset;
            let first = (t * feats.classifier.frame_rate).round() as i64;
            windows.push(clf.window(&feats.classifier, first)?);
        }
        plan.push(((a, b), i0, i1, starts));
    }
    let post = if windows.is_empty() {
        None
    } else {
        Some(clf.predict(&windows)?)
    };

    let mut events = Vec::new();
    let mut w = 0;
    for ((a, b), i0, i1, starts) in plan {
        let n = i1 - i0;
        let mut sum = vec![0.0; n * k];
        let mut count = vec![0usize; n];
        let post = post.as_ref().expect("windows exist for every interval");
        for s in starts {
            let y = frame_posteriors(clf, post, w);
            w += 1;
            for (f, row) in y.chunks(k).enumerate() {
                let g = s + f;
                if g < i0 || g >= i1 {
                    continue;
                }
                count[g - i0] += 1;
                for (acc, v) in sum[(g - i0) * k..(g - i0 + 1) * k].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        for (f, &cnt) in count.iter().enumerate() {
            for c in 0..k {
                sum[f * k + c] /= cnt as f64;
            }
            if let Some(row) = lik.data_mut().get_mut(i0 + f) {
                *row = filler.iter().map(|&c| sum[f * k + c]).sum::<f64>() as f32;
            }
        }
        for mut e in frames_to_events(&sum, &labels, background, i0 as f64 / FRAME_RATE, cfg.min_event_dur)? {
            let is_filler = filler.iter().any(|&c| labels[c] == e.label);
            e.start = e.start.max(a);
            e.end = e.end.min(b);
            if is_filler && e.confidence >= cfg.clf_threshold && e.end > e.start {
                events.push(e);
            }
        }
    }
    sort_events(&mut events);
    Ok(DetectionResult {
        mode: Mode::Vc,
        events,
        frame_likelihoods: lik,
        speech,
        candidates: IntervalSet::new(),
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_second_region_gets_five_windows() {
        assert_eq!(vc_window_starts(0, 30, 5), vec![0, 5, 10, 15, 20]);
        assert_eq!(vc_window_starts(0, 32, 5), vec![0, 5, 10, 15, 20, 22]);
        assert_eq!(vc_window_starts(7, 10, 5), vec![7]);
        assert_eq!(vc_window_starts(0, 10, 5), vec![0]);
    }
}
