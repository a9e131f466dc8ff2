//! Synthetic ordinal time-series generation, CSV ingestion, and
//! segmentation into fixed windows.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::Segment;
use crate::space::{numbered_space, ClassId, LabelDistanceKind, LabelSpace};

/// Synthetic generator configuration. Class `c` (ordinal `o_c`) produces
/// AR(1) segments per channel around the mean `o_c * class_separation * u`
/// for a fixed unit direction `u` drawn from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub n_channels: usize,
    pub segment_length: usize,
    pub segments_per_class: usize,
    /// Mean step per ordinal unit.
    pub class_separation: f64,
    /// AR(1) coefficient in [0, 1).
    pub ar_coefficient: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_classes: 10,
            n_channels: 3,
            segment_length: 10,
            segments_per_class: 150,
            class_separation: 1.0,
            ar_coefficient: 0.3,
            noise_std: 0.25,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 3 {
            return Err(Error::InvalidConfig("n_classes must be >= 3".into()));
        }
        if self.n_channels == 0 || self.segment_length == 0 || self.segments_per_class == 0 {
            return Err(Error::InvalidConfig(
                "channels, segment_length and segments_per_class must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return Err(Error::InvalidConfig(format!(
                "ar_coefficient must be in [0, 1), got {}",
                self.ar_coefficient
            )));
        }
        if self.noise_std <= 0.0 {
            return Err(Error::InvalidConfig("noise_std must be > 0".into()));
        }
        Ok(())
    }
}

/// Column names and windowing of a CSV stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub label_column: String,
    pub feature_columns: Vec<String>,
    pub window_length: usize,
    pub stride: usize,
}

impl StreamSpec {
    /// Defaults used by the synthetic CSV schema: features `f0..f{C-1}`,
    /// label column `label`, non-overlapping windows.
    pub fn synthetic(n_channels: usize, window_length: usize) -> Self {
        StreamSpec {
            label_column: "label".to_string(),
            feature_columns: (0..n_channels).map(|c| format!("f{c}")).collect(),
            window_length,
            stride: window_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(
                "window_length and stride must be >= 1".into(),
            ));
        }
        if self.feature_columns.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one feature column required".into(),
            ));
        }
        Ok(())
    }
}

/// Generate a labeled synthetic dataset and its label space (classes
/// `c1..cK` with ordinals `1..=K`, absolute label distance, nothing
/// missing). Segments are emitted class by class with sequential source
/// indices, so streams carry piecewise-constant labels.
pub fn generate(cfg: &SyntheticConfig) -> Result<(LabelSpace, Vec<Segment>)> {
    cfg.validate()?;
    let space = numbered_space(cfg.n_classes, &[], LabelDistanceKind::Absolute)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.noise_std).expect("validated noise_std");

    // fixed unit direction shared by all classes
    let mut direction: Vec<f64> = (0..cfg.n_channels)
        .map(|_| {
            let std_normal = Normal::new(0.0, 1.0).unwrap();
            std_normal.sample(&mut rng)
        })
        .collect();
    let norm: f64 = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        direction[0] = 1.0;
    } else {
        for v in &mut direction {
            *v /= norm;
        }
    }

    let phi = cfg.ar_coefficient;
    // stationary initial draw has std sigma / sqrt(1 - phi^2)
    let init_scale = 1.0 / (1.0 - phi * phi).sqrt();

    let mut segments = Vec::with_capacity(cfg.n_classes * cfg.segments_per_class);
    let mut source_index = 0usize;
    for class in space.domain() {
        let ordinal = space.ordinal(class) as f64;
        let mean: Vec<f64> = direction
            .iter()
            .map(|u| ordinal * cfg.class_separation * u)
            .collect();
        for _ in 0..cfg.segments_per_class {
            let mut values = Vec::with_capacity(cfg.segment_length * cfg.n_channels);
            let mut state: Vec<f64> = mean
                .iter()
                .map(|&m| m + normal.sample(&mut rng) * init_scale)
                .collect();
            values.extend_from_slice(&state);
            for _ in 1..cfg.segment_length {
                for (s, &m) in state.iter_mut().zip(&mean) {
                    *s = m + phi * (*s - m) + normal.sample(&mut rng);
                }
                values.extend_from_slice(&state);
            }
            segments.push(Segment::new(
                values,
                cfg.segment_length,
                cfg.n_channels,
                Some(class),
                source_index,
            )?);
            source_index += 1;
        }
    }
    Ok((space, segments))
}

/// Write segments to CSV in the synthetic schema (feature columns then the
/// label column), one row per time step, segments in source order.
pub fn export_csv(segments: &[Segment], space: &LabelSpace, path: &Path) -> Result<()> {
    let n_channels = segments
        .first()
        .map(|s| s.n_channels())
        .ok_or_else(|| Error::EmptyInput("no segments to export".into()))?;
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..n_channels).map(|c| format!("f{c}")).collect();
    header.push("label".to_string());
    writer.write_record(&header)?;
    let mut ordered: Vec<&Segment> = segments.iter().collect();
    ordered.sort_by_key(|s| s.source_index());
    for seg in ordered {
        let label = seg
            .label()
            .ok_or(Error::UnlabeledSegment(seg.source_index()))?;
        let name = space.name(label);
        for t in 0..seg.window_length() {
            let mut record: Vec<String> = seg.row(t).iter().map(|v| format!("{v}")).collect();
            record.push(name.to_string());
            writer.write_record(&record)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Feature column names of a CSV file: every header column except the label
/// column, in header order.
pub fn csv_feature_columns(path: &Path, label_column: &str) -> Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?;
    let columns: Vec<String> = headers
        .iter()
        .filter(|h| *h != label_column)
        .map(|h| h.to_string())
        .collect();
    if columns.len() == headers.len() {
        return Err(Error::InvalidConfig(format!(
            "column {label_column} not found in header"
        )));
    }
    Ok(columns)
}

/// Read a CSV stream and window it into segments. Rows are partitioned into
/// label-constant runs; windows never span a label change; the source index
/// of each segment is the absolute row index of its first row.
pub fn ingest_csv(path: &Path, spec: &StreamSpec, space: &LabelSpace) -> Result<Vec<Segment>> {
    spec.validate()?;
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let column_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidConfig(format!("column {name} not found in header")))
    };
    let label_col = column_index(&spec.label_column)?;
    let feature_cols: Vec<usize> = spec
        .feature_columns
        .iter()
        .map(|c| column_index(c))
        .collect::<Result<_>>()?;

    // (row values, label) per row
    let mut rows: Vec<(Vec<f64>, ClassId)> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let label_raw = record.get(label_col).ok_or(Error::CsvData {
            row: row_idx + 2,
            message: "missing label cell".into(),
        })?;
        let label = space.resolve(label_raw).map_err(|_| Error::CsvData {
            row: row_idx + 2,
            message: format!("label {label_raw} is not in the class domain"),
        })?;
        let mut values = Vec::with_capacity(feature_cols.len());
        for &col in &feature_cols {
            let cell = record.get(col).ok_or(Error::CsvData {
                row: row_idx + 2,
                message: "missing feature cell".into(),
            })?;
            let v: f64 = cell.parse().map_err(|_| Error::CsvData {
                row: row_idx + 2,
                message: format!("non-numeric feature value {cell:?}"),
            })?;
            values.push(v);
        }
        rows.push((values, label));
    }

    let mut segments = Vec::new();
    let n_channels = feature_cols.len();
    let mut run_start = 0usize;
    while run_start < rows.len() {
        let label = rows[run_start].1;
        let mut run_end = run_start + 1;
        while run_end < rows.len() && rows[run_end].1 == label {
            run_end += 1;
        }
        let mut start = run_start;
        while start + spec.window_length <= run_end {
            let mut values = Vec::with_capacity(spec.window_length * n_channels);
            for (row, _) in &rows[start..start + spec.window_length] {
                values.extend_from_slice(row);
            }
            segments.push(Segment::new(
                values,
                spec.window_length,
                n_channels,
                Some(label),
                start,
            )?);
            start += spec.stride;
        }
        run_start = run_end;
    }
    Ok(segments)
}

/// Stratified random split. Every segment labeled with a missing class goes
/// to the test side regardless of the fraction; the train side contains only
/// present-class segments. Both sides come back sorted by source index.
pub fn split_holdout(
    segments: &[Segment],
    test_fraction: f64,
    missing: &[ClassId],
    seed: u64,
    space: &LabelSpace,
) -> Result<(Vec<Segment>, Vec<Segment>)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); space.len()];
    for (idx, seg) in segments.iter().enumerate() {
        let label = seg
            .label()
            .ok_or(Error::UnlabeledSegment(seg.source_index()))?;
        per_class[label.0].push(idx);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class_idx, mut members) in per_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let class = ClassId(class_idx);
        if missing.contains(&class) {
            test.extend(members);
            continue;
        }
        members.shuffle(&mut rng);
        let test_count = (test_fraction * members.len() as f64).round() as usize;
        if test_count >= members.len() {
            return Err(Error::InsufficientData(format!(
                "class {} would lose all training members to the split",
                space.name(class)
            )));
        }
        test.extend(members.drain(..test_count));
        train.extend(members);
    }

    let collect_sorted = |mut idx: Vec<usize>| -> Vec<Segment> {
        idx.sort_by_key(|&i| segments[i].source_index());
        idx.into_iter().map(|i| segments[i].clone()).collect()
    };
    Ok((collect_sorted(train), collect_sorted(test)))
}
