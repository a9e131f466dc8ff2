//! Time-series segments and embedded feature vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::ClassId;

/// One fixed-length window of multivariate time series.
///
/// Values are stored row-major: `window_length` rows of `n_channels` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    values: Vec<f64>,
    window_length: usize,
    n_channels: usize,
    label: Option<ClassId>,
    source_index: usize,
}

impl Segment {
    pub fn new(
        values: Vec<f64>,
        window_length: usize,
        n_channels: usize,
        label: Option<ClassId>,
        source_index: usize,
    ) -> Result<Self> {
        if window_length == 0 || n_channels == 0 {
            return Err(Error::InvalidConfig(
                "segment window_length and n_channels must be >= 1".into(),
            ));
        }
        if values.len() != window_length * n_channels {
            return Err(Error::DimensionMismatch {
                expected: window_length * n_channels,
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "segment value at flat index {bad} (source index {source_index})"
            )));
        }
        Ok(Segment {
            values,
            window_length,
            n_channels,
            label,
            source_index,
        })
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn label(&self) -> Option<ClassId> {
        self.label
    }

    pub fn source_index(&self) -> usize {
        self.source_index
    }

    /// All values of time step `t`, one per channel.
    pub fn row(&self, t: usize) -> &[f64] {
        let start = t * self.n_channels;
        &self.values[start..start + self.n_channels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// An embedded feature vector. Encoder outputs are L2-normalized to unit
/// norm within [`UNIT_NORM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

/// Tolerance on the unit-norm invariant of encoder outputs.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_unit_norm(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }
}

/// Squared Euclidean distance between two feature vectors.
pub fn feature_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(squared_distance(a.as_slice(), b.as_slice()))
}

/// Squared Euclidean distance between raw vectors of equal length.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
