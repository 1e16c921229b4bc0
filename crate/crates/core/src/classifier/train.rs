use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frames::rasterize;
use super::model::{centered_start, BackboneConfig, FeatureInput, ClassifierModel, Variant, INPUT_FRAMES, OUTPUT_FRAMES};
use super::{resolve_label, LabelSet};
use crate::candidates::CandidateClip;
use crate::error::{Error, Result};
use crate::event::Event;
use crate::nnet::{self, one_hot, Dataset, Loss, Tensor, TrainConfig, TrainReport};
use crate::signal::{spec_augment, FrameSeries, MelConfig, Normalizer, SpecAugmentConfig};

/// One 1 s window of raw features and its clip-level class index.
#[derive(Debug, Clone, PartialEq)]
pub struct EventExample {
    pub window: FrameSeries,
    pub label: usize,
}

/// One 1 s window of raw features and its ten 10 Hz frame classes.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameExample {
    pub window: FrameSeries,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub label_set: LabelSet,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    pub spec_augment: SpecAugmentConfig,
    pub input: FeatureInput,
    pub mel: MelConfig,
    /// Classes that must have training examples. `None` means every class
    /// of the label set (the background class excepted for frame models).
    pub required_classes: Option<Vec<String>>,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            label_set: LabelSet::Coarse5,
            backbone: BackboneConfig::default(),
            train: TrainConfig {
                epochs: 15,
                batch_size: 16,
                learning_rate: 2e-3,
                ..TrainConfig::default()
            },
            spec_augment: SpecAugmentConfig::default(),
            input: FeatureInput::LogMel,
            mel: MelConfig::default(),
            required_classes: None,
        }
    }
}

/// Windows centred on each event whose label maps into `label_set`.
pub fn event_examples(features: &FrameSeries, events: &[Event], label_set: LabelSet) -> Result<Vec<EventExample>> {
    let mut out = Vec::new();
    for e in events {
        let Some(label) = resolve_label(&e.label, label_set)? else {
            continue;
        };
        let start = centered_start(features, 0.5 * (e.start + e.end));
        out.push(EventExample {
            window: features.window_reflect(start, INPUT_FRAMES),
            label: label_set.index_of(label).expect("mapped labels belong to the set"),
        });
    }
    Ok(out)
}

/// Windows centred on labelled candidates of one episode. Unlabelled
/// candidates and dropped labels are skipped.
pub fn candidate_examples(
    features: &FrameSeries,
    candidates: &[CandidateClip],
    label_set: LabelSet,
) -> Result<Vec<EventExample>> {
    let events: Vec<Event> = candidates
        .iter()
        .filter(|c| !c.label.is_empty())
        .map(|c| Event::new(c.gap_start_s, c.gap_end_s, c.label.clone(), 1.0))
        .collect();
    event_examples(features, &events, label_set)
}

/// Frame-classifier windows: `per_event` windows placing each event at a
/// random offset, plus windows centred on each of `anchors`. Targets
/// rasterize every event in `events` onto the window's 10 Hz grid.
pub fn frame_examples(
    features: &FrameSeries,
    events: &[Event],
    anchors: &[f64],
    label_set: LabelSet,
    per_event: usize,
    seed: u64,
) -> Result<Vec<FrameExample>> {
    let labels = label_set.labels();
    let background = label_set
        .index_of(label_set.background())
        .expect("background is part of every label set");
    let mut mapped = Vec::new();
    for e in events {
        if let Some(l) = resolve_label(&e.label, label_set)? {
            mapped.push(Event::new(e.start, e.end, l, e.confidence));
        }
    }
    let window_s = INPUT_FRAMES as f64 / features.frame_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = Vec::new();
    for e in &mapped {
        for _ in 0..per_event {
            let slack = (window_s - e.duration()).max(0.0);
            let t0 = e.start - rng.gen_range(0.0..=slack);
            starts.push(((t0 - features.origin_offset) * features.frame_rate).round() as i64);
        }
    }
    for &a in anchors {
        starts.push(centered_start(features, a));
    }
    Ok(starts
        .into_iter()
        .map(|s| {
            let origin = features.origin_offset + s as f64 / features.frame_rate;
            FrameExample {
                window: features.window_reflect(s, INPUT_FRAMES),
                targets: rasterize(&mapped, origin, OUTPUT_FRAMES, &labels, background),
            }
        })
        .collect())
}

/// Deterministic shuffle-and-split: the last `fraction` of a seeded
/// permutation goes to validation.
pub fn split_validation<T: Clone>(items: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((items.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let cut = items.len() - n_val;
    (
        idx[..cut].iter().map(|&i| items[i].clone()).collect(),
        idx[cut..].iter().map(|&i| items[i].clone()).collect(),
    )
}

fn check_classes(counts: &[usize], cfg: &ClassifierTrainConfig, skip: Option<usize>) -> Result<()> {
    let labels = cfg.label_set.labels();
    let required: Vec<usize> = match &cfg.required_classes {
        None => (0..labels.len()).filter(|&i| Some(i) != skip).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                cfg.label_set
                    .index_of(n)
                    .ok_or_else(|| Error::Invalid(format!("'{n}' is not a {} label", cfg.label_set)))
            })
            .collect::<Result<_>>()?,
    };
    let missing: Vec<&str> = required
        .into_iter()
        .filter(|&i| counts[i] == 0)
        .map(|i| labels[i])
        .collect();
    if !missing.is_empty() {
        return Err(Error::Invalid(format!(
            "no training examples for class(es) {}",
            missing.join(", ")
        )));
    }
    Ok(())
}

/// Per-label example counts.
pub fn class_counts(labels: impl IntoIterator<Item = usize>, label_set: LabelSet) -> BTreeMap<&'static str, usize> {
    let names = label_set.labels();
    let mut m: BTreeMap<&'static str, usize> = names.iter().map(|n| (*n, 0)).collect();
    for l in labels {
        *m.get_mut(names[l]).expect("label index in range") += 1;
    }
    m
}

struct WindowSet<'a> {
    inputs: Vec<Tensor>,
    targets: &'a [Vec<usize>],
    k: usize,
    augment: Option<&'a SpecAugmentConfig>,
    raw: Vec<FrameSeries>,
}

impl Dataset for WindowSet<'_> {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn sample(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
        let x = match self.augment {
            Some(cfg) => {
                let w = spec_augment(&self.raw[index], cfg, rng.gen());
                Tensor::new(self.inputs[index].shape().to_vec(), w.to_channels_first())?
            }
            None => self.inputs[index].clone(),
        };
        let t = &self.targets[index];
        let positions: &[usize] = if t.len() == 1 { &[] } else { &[OUTPUT_FRAMES] };
        Ok((x, one_hot(t, 1, self.k, positions)?.sample(0)))
    }
}

fn build_set<'a>(
    model: &ClassifierModel,
    windows: Vec<&FrameSeries>,
    targets: &'a [Vec<usize>],
    augment: Option<&'a SpecAugmentConfig>,
) -> Result<WindowSet<'a>> {
    let mut inputs = Vec::with_capacity(windows.len());
    let mut raw = Vec::with_capacity(windows.len());
    for w in windows {
        if w.frames() != INPUT_FRAMES {
            return Err(Error::Shape(format!(
                "training windows must have {INPUT_FRAMES} frames, got {}",
                w.frames()
            )));
        }
        let n = model.norm.apply(w)?;
        inputs.push(Tensor::new(vec![n.dims(), INPUT_FRAMES], n.to_channels_first())?);
        raw.push(n);
    }
    Ok(WindowSet {
        inputs,
        targets,
        k: model.labels().len(),
        augment,
        raw,
    })
}

fn fit_and_train(
    variant: Variant,
    train_windows: Vec<&FrameSeries>,
    train_targets: &[Vec<usize>],
    val_windows: Vec<&FrameSeries>,
    val_targets: &[Vec<usize>],
    cfg: &ClassifierTrainConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    let dims = train_windows[0].dims();
    let mut m = ClassifierModel::new(variant, cfg.label_set, dims, &cfg.backbone, cfg.train.seed)?;
    m.mel = cfg.mel.clone();
    m.input = cfg.input;
    m.norm = Normalizer::fit(train_windows.iter().copied())?;
    let tr = build_set(&m, train_windows, train_targets, Some(&cfg.spec_augment))?;
    let va = build_set(&m, val_windows, val_targets, None)?;
    let mut tcfg = cfg.train.clone();
    tcfg.loss = Loss::CrossEntropy;
    let report = nnet::train(&mut m.model, &tr, if va.is_empty() { None } else { Some(&va) }, &tcfg)?;
    Ok((m, report))
}

/// Trains the clip-level classifier. Every class of the label set must have
/// at least one training example.
pub fn train_event_classifier(
    train: &[EventExample],
    val: &[EventExample],
    cfg: &ClassifierTrainConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    let k = cfg.label_set.labels().len();
    let mut counts = vec![0; k];
    for e in train.iter().chain(val) {
        if e.label >= k {
            return Err(Error::Invalid(format!("class index {} outside {}", e.label, cfg.label_set)));
        }
    }
    for e in train {
        counts[e.label] += 1;
    }
    check_classes(&counts, cfg, None)?;
    let tt: Vec<Vec<usize>> = train.iter().map(|e| vec![e.label]).collect();
    let vt: Vec<Vec<usize>> = val.iter().map(|e| vec![e.label]).collect();
    fit_and_train(
        Variant::Event,
        train.iter().map(|e| &e.window).collect(),
        &tt,
        val.iter().map(|e| &e.window).collect(),
        &vt,
        cfg,
    )
}

/// Trains the 10 Hz frame classifier with cross-entropy averaged over the
/// ten output frames. Every non-background class must occur in some frame.
pub fn train_frame_classifier(
    train: &[FrameExample],
    val: &[FrameExample],
    cfg: &ClassifierTrainConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    let k = cfg.label_set.labels().len();
    let background = cfg.label_set.index_of(cfg.label_set.background());
    for e in train.iter().chain(val) {
        if e.targets.len() != OUTPUT_FRAMES || e.targets.iter().any(|&t| t >= k) {
            return Err(Error::Invalid(format!(
                "frame targets must be {OUTPUT_FRAMES} indices below {k}"
            )));
        }
    }
    let mut counts = vec![0; k];
    for t in train.iter().flat_map(|e| &e.targets) {
        counts[*t] += 1;
    }
    if train.is_empty() {
        return Err(Error::Invalid("no frame-classifier training examples".into()));
    }
    check_classes(&counts, cfg, background)?;
    let tt: Vec<Vec<usize>> = train.iter().map(|e| e.targets.clone()).collect();
    let vt: Vec<Vec<usize>> = val.iter().map(|e| e.targets.clone()).collect();
    fit_and_train(
        Variant::Frame,
        train.iter().map(|e| &e.window).collect(),
        &tt,
        val.iter().map(|e| &e.window).collect(),
        &vt,
        cfg,
    )
}

/// Fraction of examples whose argmax posterior equals the label.
pub fn event_accuracy(model: &ClassifierModel, examples: &[EventExample]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let windows: Vec<Tensor> = examples
        .iter()
        .map(|e| {
            let n = model.norm.apply(&e.window)?;
            Tensor::new(vec![n.dims(), INPUT_FRAMES], n.to_channels_first())
        })
        .collect::<Result<_>>()?;
    let y = model.predict(&windows)?;
    let k = y.dim(1);
    let hits = examples
        .iter()
        .enumerate()
        .filter(|(b, e)| argmax(&y.data()[b * k..(b + 1) * k]) == e.label)
        .count();
    Ok(hits as f64 / examples.len() as f64)
}

/// Fraction of 10 Hz frames whose argmax equals the target.
pub fn frame_accuracy(model: &ClassifierModel, examples: &[FrameExample]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for e in examples {
        let n = model.norm.apply(&e.window)?;
        let rows = model.classify_frames(&Tensor::new(vec![n.dims(), INPUT_FRAMES], n.to_channels_first())?)?;
        let k = rows.len() / OUTPUT_FRAMES;
        hits += (0..OUTPUT_FRAMES)
            .filter(|&f| argmax(&rows[f * k..(f + 1) * k]) == e.targets[f])
            .count();
    }
    Ok(hits as f64 / (examples.len() * OUTPUT_FRAMES) as f64)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

