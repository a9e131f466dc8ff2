//! Experiment config files: JSON or TOML, selected by extension.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ordiq::data::{ingest_csv, StreamSpec, SyntheticConfig};
use ordiq::harness::ExperimentSpec;
use ordiq::{Error, LabelSpace, Result, Segment};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentFile {
    pub data: DataSource,
    /// Inline label space; required for CSV data unless `space_path` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<LabelSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space_path: Option<PathBuf>,
    pub experiment: ExperimentSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Csv(CsvSource),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    /// Empty means every non-label column, in header order.
    #[serde(default)]
    pub feature_columns: Vec<String>,
    pub window_length: usize,
    /// Defaults to `window_length` (non-overlapping).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

fn default_label_column() -> String {
    "label".to_string()
}

impl ExperimentFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Ok(serde_json::from_str(&text)?),
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("toml parse error: {e}"))),
            other => Err(Error::InvalidConfig(format!(
                "experiment config must be .json or .toml, got {other:?}"
            ))),
        }
    }

    /// Materialize the label space and dataset described by the file.
    pub fn load_data(&self, config_dir: &Path) -> Result<(LabelSpace, Vec<Segment>)> {
        match &self.data {
            DataSource::Synthetic(cfg) => {
                let (generated_space, segments) = ordiq::data::generate(cfg)?;
                let space = match (&self.space, &self.space_path) {
                    (Some(space), _) => space.clone(),
                    (None, Some(path)) => load_space(&config_dir.join(path))?,
                    (None, None) => generated_space,
                };
                Ok((space, segments))
            }
            DataSource::Csv(source) => {
                let space = match (&self.space, &self.space_path) {
                    (Some(space), _) => space.clone(),
                    (None, Some(path)) => load_space(&config_dir.join(path))?,
                    (None, None) => {
                        return Err(Error::InvalidConfig(
                            "csv data requires `space` or `space_path`".into(),
                        ))
                    }
                };
                let csv_path = config_dir.join(&source.path);
                let feature_columns = if source.feature_columns.is_empty() {
                    ordiq::data::csv_feature_columns(&csv_path, &source.label_column)?
                } else {
                    source.feature_columns.clone()
                };
                let spec = StreamSpec {
                    label_column: source.label_column.clone(),
                    feature_columns,
                    window_length: source.window_length,
                    stride: source.stride.unwrap_or(source.window_length),
                };
                let segments = ingest_csv(&csv_path, &spec, &space)?;
                Ok((space, segments))
            }
        }
    }
}

pub fn load_space(path: &Path) -> Result<LabelSpace> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_space(space: &LabelSpace, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(space)?)?;
    Ok(())
}
