//! Masklet-based refinement and evaluation of video semantic segmentation.
//!
//! The crate works on serialized artifacts only: dense label maps, class-agnostic
//! masklet streams, and pooled encoder features. No network inference happens here.

pub mod classifier;
pub mod components;
pub mod error;
pub mod filter;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod refine;
pub mod synth;
pub mod tracker;

pub use classifier::{FeatureVector, MlpModel, TrainConfig};
pub use error::{Error, Result};
pub use filter::FilterConfig;
pub use io::{ClipManifest, FeatureMap};
pub use mask::{mask_area, mask_iou, rle_decode, rle_encode, BinaryMask, LabelMap, Masklet, MaskletSet};
pub use metrics::{ConfusionMatrix, EvalConfig, MetricsReport};
pub use pipeline::{PipelineConfig, PipelineReport, SweepParameter, SweepSpec};
pub use refine::{OverlapOrder, RefineConfig, VoteScope};
pub use tracker::{MaskletTrack, TrackerConfig};
