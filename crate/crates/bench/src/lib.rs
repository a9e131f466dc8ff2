//! Shared fixtures for the ordiq benchmarks.

use ordiq::data::{generate, SyntheticConfig};
use ordiq::{LabelSpace, Segment};

/// Standard benchmark dataset: 8 ordered classes of AR(1) segments.
pub fn bench_dataset(per_class: usize) -> (LabelSpace, Vec<Segment>) {
    generate(&SyntheticConfig {
        n_classes: 8,
        n_channels: 3,
        segment_length: 10,
        segments_per_class: per_class,
        class_separation: 1.0,
        ar_coefficient: 0.3,
        noise_std: 0.25,
        seed: 42,
    })
    .expect("valid synthetic config")
}
