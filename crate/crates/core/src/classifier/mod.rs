//! Filler classification over 1 s windows of 100 Hz features: a clip-level
//! event classifier and a 10 Hz frame classifier sharing one residual
//! temporal-convolution backbone.

mod frames;
mod labels;
mod model;
mod train;

pub use frames::{frames_to_events, rasterize, FRAME_RATE};
pub use labels::{canonical_label, map_label, resolve_label, LabelSet, ANNOTATION13};
pub use model::{
    centered_start, classifier_architecture, window_origin, BackboneConfig, FeatureInput, ClassifierModel, Variant, INPUT_FRAMES,
    INPUT_RATE, OUTPUT_FRAMES,
};
pub use train::{
    candidate_examples, class_counts, event_accuracy, event_examples, frame_accuracy, frame_examples, split_validation,
    train_event_classifier, train_frame_classifier, ClassifierTrainConfig, EventExample, FrameExample,
};
