//! Differentiable path from camouflage texture to attacked detection.

mod atlas;
mod detector;
mod eot;
mod features;
mod texture;

pub use atlas::{FaceAtlas, FaceRegion, FaceTexel};
pub use detector::{slot, DetectionBox, DetectorConfig, SurrogateDetector, HIDDEN, OUTPUTS};
pub use eot::{apply_eot, sample_eot, EotRanges, EotSample};
pub use features::{
    pool_backward, pool_features, FeatureVector, ViewContext, ViewModel, FEATURE_DIM, STATS_PER_FACE,
};
pub use texture::Texture;
