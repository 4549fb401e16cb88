//! Statistically trained pupil segmentation with elliptical-landmark
//! block-sum features.
//!
//! The pipeline stages are:
//!
//! 1. **geom** – ellipses, eight-point boundary landmarks, rasterized masks.
//! 2. **features** – exact block-sum downscaling and the inner/outer
//!    landmark difference extractor with per-frame memoization.
//! 3. **train** – three linear passes over the data: shape distribution,
//!    difference-set prototypes (mean shift, at most five per entry), and
//!    sign-agreement landmark weights.
//! 4. **detect** – weighted-L1 argmin over every trained (position, ellipse)
//!    candidate, with probability tie-breaking and partial-ellipse scoring.
//! 5. **synth** – deterministic synthetic eye frames with exact ground truth
//!    and the noise/reflection/contrast/shift/zoom augmentation recipe.
//! 6. **eval** – IoU, center error, cumulative curves, 10x10 grid maps and a
//!    single-core latency harness.
//! 7. **model_io** – versioned, checksummed binary model files.

pub mod dataset;
pub mod detect;
mod error;
pub mod eval;
pub mod features;
pub mod geom;
pub mod model;
pub mod model_io;
pub mod synth;
pub mod train;

pub use dataset::{Dataset, DirDataset, MemoryDataset};
pub use detect::{detect, detect_oracle, segment, Detection, MIN_VALID_LANDMARKS};
pub use error::{Error, Result};
pub use geom::{
    ellipse_landmarks, quantize_center, rasterize, Ellipse, EllipseMask, GrayImage, LandmarkSet,
};
pub use model::{ModelConfig, PupilModel, ShapeDistribution};
pub use synth::{augment, make_dataset, render, AugmentConfig, SceneParams, SceneSampler};
pub use train::{train, TrainConfig, TrainReport};
