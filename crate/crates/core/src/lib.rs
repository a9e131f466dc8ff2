//! Ordinal time-series classification that stays accurate when entire
//! classes are absent from training.
//!
//! The pipeline: a small temporal encoder is trained under the
//! ordinal-quadruplet loss so that embedding distances preserve the label
//! order; test segments (including segments of never-seen classes) are then
//! classified by rank-correlation retrieval against class centroids, an
//! empirical-quantile hypothesis test, and majority-rule correction over
//! historical windows.

pub mod data;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod objective;
pub mod retrieval;
pub mod segment;
pub mod space;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
pub use segment::{feature_distance, FeatureVector, Segment};
pub use space::{ClassDef, ClassId, LabelDistanceKind, LabelSpace};
