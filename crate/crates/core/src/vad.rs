//! Frame-level voice activity detection at 100 Hz.
//!
//! The network is a convolutional stack over `[1, mel, time]` that pools
//! only along frequency, so every input frame gets its own sigmoid output.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{self, Dataset, LayerSpec, Loss, Model, Tensor, TrainConfig, TrainReport};
use crate::signal::{reflect_index, FrameSeries, MelConfig, Normalizer};
use crate::synth::FrameLabels;
use crate::transcripts::IntervalSet;

pub const VAD_RATE: f64 = 100.0;
pub const WINDOW_FRAMES: usize = 100;
pub const HOP_FRAMES: usize = 50;
/// Lenient threshold used for candidate generation.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Conv blocks of the VAD; each pools frequency by 4 (64 -> 16 -> 4 -> 1).
pub fn vad_architecture(n_mels: usize, widths: [usize; 3]) -> Result<Vec<LayerSpec>> {
    if n_mels != 64 {
        return Err(Error::Invalid(format!(
            "VAD architecture pools 64 mel bands to 1, got {n_mels}"
        )));
    }
    let mut layers = Vec::new();
    let mut cin = 1;
    for &w in &widths {
        layers.push(LayerSpec::Conv2d {
            in_channels: cin,
            out_channels: w,
            kernel: [3, 3],
        });
        layers.push(LayerSpec::BatchNorm { channels: w });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPoolFreq { pool: 4 });
        cin = w;
    }
    layers.push(LayerSpec::Dense {
        input_size: cin,
        output_size: 1,
    });
    layers.push(LayerSpec::Sigmoid);
    Ok(layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VadModel {
    pub model: Model,
    pub mel: MelConfig,
    pub norm: Normalizer,
}

impl VadModel {
    pub fn new(widths: [usize; 3], seed: u64) -> Result<Self> {
        let mel = MelConfig::default();
        let model = Model::new(vad_architecture(mel.n_mels, widths)?, seed)?;
        Ok(Self {
            model,
            norm: Normalizer::identity(mel.n_mels),
            mel,
        })
    }

    fn sync_metadata(&mut self) -> Result<()> {
        let meta = &mut self.model.metadata;
        meta.insert("kind".into(), serde_json::json!("vad"));
        meta.insert("mel".into(), serde_json::to_value(&self.mel)?);
        meta.insert("norm".into(), serde_json::to_value(&self.norm)?);
        Ok(())
    }

    pub fn from_model(model: Model) -> Result<Self> {
        let get = |k: &str| {
            model
                .metadata
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Malformed(format!("VAD model lacks '{k}' metadata")))
        };
        if get("kind")? != serde_json::json!("vad") {
            return Err(Error::Invalid("model file is not a VAD model".into()));
        }
        let mel = serde_json::from_value(get("mel")?)?;
        let norm = serde_json::from_value(get("norm")?)?;
        Ok(Self { model, mel, norm })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut m = self.clone();
        m.sync_metadata()?;
        nnet::save_model(path, &m.model)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_model(nnet::load_model(path)?)
    }
}

/// Windows of `WINDOW_FRAMES` frames, 50 % overlap, over the sequence
/// mirrored by half a window at both ends. Returns the window tensor batch
/// and each window's start in original frame indices.
fn windows(x: &FrameSeries) -> (Vec<Tensor>, Vec<i64>) {
    let t = x.frames() as i64;
    let pad = (WINDOW_FRAMES / 2) as i64;
    let mut starts = Vec::new();
    let mut s = -pad;
    loop {
        starts.push(s);
        if s + WINDOW_FRAMES as i64 >= t + pad {
            break;
        }
        s += HOP_FRAMES as i64;
    }
    let d = x.dims();
    let wins = starts
        .iter()
        .map(|&s0| {
            let w = x.window_reflect(s0, WINDOW_FRAMES);
            Tensor::new(vec![1, d, WINDOW_FRAMES], w.to_channels_first()).expect("window shape")
        })
        .collect();
    (wins, starts)
}

const INFER_BATCH: usize = 16;

/// Per-frame speech probability for log-mel `features` (100 Hz, 64 dims).
/// Overlapping window outputs are averaged.
pub fn vad_infer(vad: &VadModel, features: &FrameSeries) -> Result<FrameSeries> {
    if features.dims() != vad.mel.n_mels {
        return Err(Error::Shape(format!(
            "VAD expects {} mel bands, got {}",
            vad.mel.n_mels,
            features.dims()
        )));
    }
    if (features.frame_rate - VAD_RATE).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "VAD expects {VAD_RATE} Hz features, got {}",
            features.frame_rate
        )));
    }
    let t = features.frames();
    if t == 0 {
        return Ok(FrameSeries::zeros(0, 1, VAD_RATE).with_origin(features.origin_offset));
    }
    let x = vad.norm.apply(features)?;
    let (wins, starts) = windows(&x);
    let mut sum = vec![0.0f64; t];
    let mut cnt = vec![0u32; t];
    for (chunk, chunk_starts) in wins.chunks(INFER_BATCH).zip(starts.chunks(INFER_BATCH)) {
        let batch = Tensor::stack(chunk)?;
        let y = vad.model.predict(&batch)?;
        for (b, &s0) in chunk_starts.iter().enumerate() {
            let out = &y.data()[b * WINDOW_FRAMES..(b + 1) * WINDOW_FRAMES];
            for (k, &p) in out.iter().enumerate() {
                let i = s0 + k as i64;
                if i >= 0 && (i as usize) < t {
                    sum[i as usize] += p;
                    cnt[i as usize] += 1;
                }
            }
        }
    }
    let data = sum
        .iter()
        .zip(&cnt)
        .map(|(s, &c)| (s / c.max(1) as f64) as f32)
        .collect();
    Ok(FrameSeries::new(data, t, 1, VAD_RATE)?.with_origin(features.origin_offset))
}

/// Thresholds activations (`act >= threshold` is active) into speech
/// intervals `[i/rate, (j+1)/rate]`, then merges gaps shorter than
/// `min_gap_s` and drops intervals shorter than `min_dur_s`.
pub fn activations_to_intervals(
    act: &FrameSeries,
    threshold: f64,
    min_gap_s: f64,
    min_dur_s: f64,
) -> Result<IntervalSet> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    if act.dims() != 1 {
        return Err(Error::Shape(format!("activations must have 1 dim, got {}", act.dims())));
    }
    let rate = act.frame_rate;
    let t0 = act.origin_offset;
    let mut runs: Vec<(f64, f64)> = Vec::new();
    let mut start = None;
    for i in 0..=act.frames() {
        let on = i < act.frames() && act.data()[i] as f64 >= threshold;
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(a)) => {
                runs.push((t0 + a as f64 / rate, t0 + i as f64 / rate));
                start = None;
            }
            _ => {}
        }
    }
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(runs.len());
    for r in runs {
        match merged.last_mut() {
            Some(last) if r.0 - last.1 < min_gap_s => last.1 = r.1,
            _ => merged.push(r),
        }
    }
    Ok(IntervalSet::from_pairs(
        merged.into_iter().filter(|(a, b)| b - a >= min_dur_s),
    ))
}

/// Training example: normalised log-mel features and their frame labels.
#[derive(Debug, Clone)]
pub struct VadExample {
    pub features: FrameSeries,
    pub labels: FrameLabels,
}

/// Random 100-frame crops with per-frame BCE targets.
pub struct VadDataset<'a> {
    pub examples: &'a [VadExample],
    pub crop: usize,
}

impl Dataset for VadDataset<'_> {
    fn len(&self) -> usize {
        self.examples.len()
    }

    fn sample(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
        let ex = &self.examples[index];
        let t = ex.features.frames().min(ex.labels.len());
        let d = ex.features.dims();
        let crop = self.crop;
        let start = if t > crop { rng.gen_range(0..=t - crop) } else { 0 };
        let mut x = vec![0.0; d * crop];
        let mut y = vec![0.0; crop];
        for k in 0..crop {
            // Short examples are mirrored like at inference time.
            let i = start + reflect_index(k as i64, t);
            for (m, &v) in ex.features.row(i).iter().enumerate() {
                x[m * crop + k] = v as f64;
            }
            y[k] = if ex.labels.speech[i] { 1.0 } else { 0.0 };
        }
        Ok((Tensor::new(vec![1, d, crop], x)?, Tensor::new(vec![1, 1, crop], y)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VadTrainConfig {
    pub widths: [usize; 3],
    pub train: TrainConfig,
    pub crop_frames: usize,
}

impl Default for VadTrainConfig {
    fn default() -> Self {
        Self {
            widths: [16, 32, 64],
            train: TrainConfig {
                epochs: 15,
                batch_size: 16,
                learning_rate: 2e-3,
                loss: Loss::BinaryCrossEntropy,
                ..Default::default()
            },
            crop_frames: WINDOW_FRAMES,
        }
    }
}

/// Fits normalisation on the raw training features, then trains the VAD.
/// `train` and `val` hold raw (unnormalised) log-mel features.
pub fn train_vad(
    train: &[VadExample],
    val: &[VadExample],
    cfg: &VadTrainConfig,
) -> Result<(VadModel, TrainReport)> {
    if train.is_empty() {
        return Err(Error::Invalid("no VAD training examples".into()));
    }
    let mut vad = VadModel::new(cfg.widths, cfg.train.seed)?;
    vad.norm = Normalizer::fit(train.iter().map(|e| &e.features))?;
    let prep = |set: &[VadExample]| -> Result<Vec<VadExample>> {
        set.iter()
            .map(|e| {
                Ok(VadExample {
                    features: vad.norm.apply(&e.features)?,
                    labels: e.labels.clone(),
                })
            })
            .collect()
    };
    let tr = prep(train)?;
    let va = prep(val)?;
    let mut tcfg = cfg.train.clone();
    tcfg.loss = Loss::BinaryCrossEntropy;
    let tr_set = VadDataset {
        examples: &tr,
        crop: cfg.crop_frames,
    };
    let va_set = VadDataset {
        examples: &va,
        crop: cfg.crop_frames,
    };
    let report = nnet::train(
        &mut vad.model,
        &tr_set,
        if va.is_empty() { None } else { Some(&va_set) },
        &tcfg,
    )?;
    vad.sync_metadata()?;
    Ok((vad, report))
}

/// Frame precision and recall of thresholded activations against labels.
pub fn frame_precision_recall(act: &FrameSeries, labels: &FrameLabels, threshold: f64) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fneg = 0;
    for (i, &truth) in labels.speech.iter().enumerate().take(act.frames()) {
        let pred = act.data()[i] as f64 >= threshold;
        match (pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    (tp, fp, fneg)
}
