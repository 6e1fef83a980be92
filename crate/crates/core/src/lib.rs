//! Image-based vehicle classification from local gradient descriptors.
//!
//! Two pipelines share one feature stage and one codebook:
//!
//! 1. **Inter-class** (visually distinct types, e.g. car vs van): Canny edge
//!    pixels anchor fixed-scale, fixed-orientation descriptors; training
//!    descriptors are clustered with K-means; every cluster gets a per-class
//!    weight from how many training images of that class it matches; a query
//!    is classified by summing the weights of the clusters it matches.
//! 2. **Intra-class** (visually similar types, e.g. sedan vs taxi): dense
//!    foreground pixels anchor the same descriptors; each image is reduced to
//!    a K-bit signature recording which clusters it matches; a query takes the
//!    label of its nearest training signature.
//!
//! All matching is Euclidean. Everything is deterministic given explicit
//! seeds: training twice with identical inputs produces byte-identical model
//! files.
//!
//! Numeric code is generic over the scalar type via [`Real`]; `f32` and `f64`
//! both work. The CLI and the model file format use `f64`.

pub mod classify;
pub mod codebook;
pub mod edge;
mod error;
pub mod eval;
pub mod feature;
pub mod imgio;
pub mod model;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub use classify::{ClassScore, IntraMatch, Signature, WeightTable};
pub use codebook::{Assignment, Codebook};
pub use edge::{EdgeMap, GradientField, Raster};
pub use feature::{Descriptor, ExtractMode, FeatureParams, Keypoint, DESCRIPTOR_LEN};
pub use imgio::{GrayImage, Mask};
pub use model::{Mode, ModelParams, TrainedModel, Verdict};

/// Single-precision aliases for the core value types.
pub type Descriptor32 = Descriptor<f32>;
pub type Codebook32 = Codebook<f32>;
pub type WeightTable32 = WeightTable<f32>;
pub type TrainedModel32 = TrainedModel<f32>;

/// Double-precision aliases; this is what the CLI and model files use.
pub type Descriptor64 = Descriptor<f64>;
pub type Codebook64 = Codebook<f64>;
pub type WeightTable64 = WeightTable<f64>;
pub type TrainedModel64 = TrainedModel<f64>;
