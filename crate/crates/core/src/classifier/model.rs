use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabelSet;
use crate::error::{Error, Result};
use crate::nnet::{self, LayerSpec, Model, Tensor};
use crate::signal::{FrameSeries, MelConfig, Normalizer};

/// Classifier input: 1 s of 100 Hz features.
pub const INPUT_FRAMES: usize = 100;
pub const INPUT_RATE: f64 = 100.0;
/// Frame-classifier outputs per input window.
pub const OUTPUT_FRAMES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One posterior vector per window.
    Event,
    /// Ten posterior vectors per window, one per 100 ms.
    Frame,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "event" => Ok(Variant::Event),
            "frame" => Ok(Variant::Frame),
            _ => Err(Error::Invalid(format!("unknown classifier variant '{s}'"))),
        }
    }
}

/// Where classifier input features come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureInput {
    /// Log-mel features computed from audio with the model's mel settings.
    #[default]
    LogMel,
    /// Precomputed 100 Hz feature files, such as speech-model embeddings.
    External,
}

/// Channel widths and kernel of the residual temporal-convolution backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub block_channels: Vec<usize>,
    pub block_kernel: usize,
    pub lstm_hidden: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stem_channels: 16,
            stem_kernel: 3,
            block_channels: vec![24, 32, 48],
            block_kernel: 9,
            lstm_hidden: 64,
        }
    }
}

/// Features along channels, time along the sequence axis: a stem
/// convolution, then residual blocks whose first convolution has stride 2
/// (100 -> 50 -> 25 -> 13 frames). The event head averages over time; the
/// frame head pools to exactly ten steps and runs an LSTM before the
/// per-step classifier.
pub fn classifier_architecture(
    variant: Variant,
    input_dims: usize,
    n_classes: usize,
    cfg: &BackboneConfig,
) -> Vec<LayerSpec> {
    let mut layers = vec![
        LayerSpec::Conv1dTemporal {
            in_channels: input_dims,
            out_channels: cfg.stem_channels,
            kernel: cfg.stem_kernel,
            stride: 1,
        },
        LayerSpec::BatchNorm {
            channels: cfg.stem_channels,
        },
        LayerSpec::Relu,
    ];
    let mut c = cfg.stem_channels;
    for &w in &cfg.block_channels {
        layers.push(LayerSpec::ResidualBlock {
            in_channels: c,
            out_channels: w,
            kernel: cfg.block_kernel,
            stride: 2,
        });
        c = w;
    }
    match variant {
        Variant::Event => {
            layers.push(LayerSpec::AvgPoolTime { output_frames: None });
            layers.push(LayerSpec::Dense {
                input_size: c,
                output_size: n_classes,
            });
        }
        Variant::Frame => {
            layers.push(LayerSpec::AvgPoolTime {
                output_frames: Some(OUTPUT_FRAMES),
            });
            layers.push(LayerSpec::Lstm {
                input_size: c,
                hidden_size: cfg.lstm_hidden,
            });
            layers.push(LayerSpec::Dense {
                input_size: cfg.lstm_hidden,
                output_size: n_classes,
            });
        }
    }
    layers.push(LayerSpec::Softmax);
    layers
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub variant: Variant,
    pub label_set: LabelSet,
    pub model: Model,
    pub input: FeatureInput,
    pub mel: MelConfig,
    pub norm: Normalizer,
}

impl ClassifierModel {
    pub fn new(variant: Variant, label_set: LabelSet, input_dims: usize, cfg: &BackboneConfig, seed: u64) -> Result<Self> {
        let n = label_set.labels().len();
        let model = Model::new(classifier_architecture(variant, input_dims, n, cfg), seed)?;
        Ok(Self {
            variant,
            label_set,
            model,
            input: FeatureInput::LogMel,
            mel: MelConfig::default(),
            norm: Normalizer::identity(input_dims),
        })
    }

    pub fn labels(&self) -> Vec<&'static str> {
        self.label_set.labels()
    }

    pub fn background_index(&self) -> usize {
        self.label_set
            .index_of(self.label_set.background())
            .expect("background is part of every label set")
    }

    pub fn input_dims(&self) -> usize {
        self.norm.mean.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut m = self.model.clone();
        m.metadata.insert("kind".into(), serde_json::json!("classifier"));
        m.metadata.insert("variant".into(), serde_json::to_value(self.variant)?);
        m.metadata.insert("label_set".into(), serde_json::to_value(self.label_set)?);
        m.metadata.insert("labels".into(), serde_json::to_value(self.labels())?);
        m.metadata.insert("input".into(), serde_json::to_value(self.input)?);
        m.metadata.insert("mel".into(), serde_json::to_value(&self.mel)?);
        m.metadata.insert("norm".into(), serde_json::to_value(&self.norm)?);
        nnet::save_model(path, &m)
    }

    pub fn from_model(model: Model) -> Result<Self> {
        let get = |k: &str| {
            model
                .metadata
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Malformed(format!("classifier model lacks '{k}' metadata")))
        };
        if get("kind")? != serde_json::json!("classifier") {
            return Err(Error::Invalid("model file is not a filler classifier".into()));
        }
        Ok(Self {
            variant: serde_json::from_value(get("variant")?)?,
            label_set: serde_json::from_value(get("label_set")?)?,
            input: match model.metadata.get("input") {
                Some(v) => serde_json::from_value(v.clone())?,
                None => FeatureInput::LogMel,
            },
            mel: serde_json::from_value(get("mel")?)?,
            norm: serde_json::from_value(get("norm")?)?,
            model,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_model(nnet::load_model(path)?)
    }

    /// Network input for the window of `INPUT_FRAMES` frames starting at
    /// frame `start` of raw (unnormalised) `features`, mirrored at the edges.
    pub fn window(&self, features: &FrameSeries, start: i64) -> Result<Tensor> {
        if features.dims() != self.input_dims() {
            return Err(Error::Shape(format!(
                "classifier expects {} feature dims, got {}",
                self.input_dims(),
                features.dims()
            )));
        }
        if features.frames() == 0 {
            return Err(Error::Invalid("no feature frames".into()));
        }
        let w = self.norm.apply(&features.window_reflect(start, INPUT_FRAMES))?;
        Tensor::new(vec![self.input_dims(), INPUT_FRAMES], w.to_channels_first())
    }

    /// Posteriors for a batch of windows: `[n, k]` for the event variant,
    /// `[n, k, 10]` for the frame variant.
    pub fn predict(&self, windows: &[Tensor]) -> Result<Tensor> {
        let mut outs = Vec::new();
        for chunk in windows.chunks(32) {
            outs.push(self.model.predict(&Tensor::stack(chunk)?)?);
        }
        let mut samples = Vec::new();
        for o in &outs {
            for b in 0..o.dim(0) {
                samples.push(o.sample(b));
            }
        }
        Tensor::stack(&samples)
    }

    /// Event-variant posterior for one normalised 1 s window.
    pub fn classify_event(&self, window: &Tensor) -> Result<Vec<f64>> {
        if self.variant != Variant::Event {
            return Err(Error::Invalid("classify_event needs an event classifier".into()));
        }
        check_window(window, self.input_dims())?;
        Ok(self.predict(std::slice::from_ref(window))?.into_data())
    }

    /// Frame-variant posteriors as ten rows of `k` values.
    pub fn classify_frames(&self, window: &Tensor) -> Result<Vec<f64>> {
        if self.variant != Variant::Frame {
            return Err(Error::Invalid("classify_frames needs a frame classifier".into()));
        }
        check_window(window, self.input_dims())?;
        let y = self.predict(std::slice::from_ref(window))?;
        let k = y.dim(1);
        let mut rows = vec![0.0; k * OUTPUT_FRAMES];
        for c in 0..k {
            for f in 0..OUTPUT_FRAMES {
                rows[f * k + c] = y.data()[c * OUTPUT_FRAMES + f];
            }
        }
        Ok(rows)
    }
}

fn check_window(w: &Tensor, dims: usize) -> Result<()> {
    if w.shape() != [dims, INPUT_FRAMES] {
        return Err(Error::Shape(format!(
            "window must be [{dims}, {INPUT_FRAMES}], got {:?}",
            w.shape()
        )));
    }
    Ok(())
}

/// Time of the first 10 Hz output frame of a window starting at `start`
/// feature frames.
pub fn window_origin(features: &FrameSeries, start: i64) -> f64 {
    features.origin_offset + start as f64 / features.frame_rate
}

/// Window start frame centring a 1 s window at time `t`.
pub fn centered_start(features: &FrameSeries, t: f64) -> i64 {
    ((t - features.origin_offset) * features.frame_rate).round() as i64 - (INPUT_FRAMES / 2) as i64
}

