//! Run configuration: a sectioned TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetName;
use crate::diffraction::{PropagationGeometry, DEFAULT_WAVELENGTH};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "default_wavelength")]
    pub wavelength: f64,
    /// Defaults to one wavelength.
    pub pitch: Option<f64>,
    /// Defaults to one hundred wavelengths.
    pub spacing: Option<f64>,
}

fn default_wavelength() -> f64 {
    DEFAULT_WAVELENGTH
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { wavelength: DEFAULT_WAVELENGTH, pitch: None, spacing: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the four IDX files; defaults to `data/<dataset>`.
    pub dir: Option<PathBuf>,
    /// Use only the first N training items.
    pub train_samples: Option<usize>,
    /// Use only the first N test items.
    pub test_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    /// Write phase maps at epochs 0, 10 and 20.
    #[serde(default)]
    pub phase_maps: bool,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out(), phase_maps: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fills every default, makes paths absolute and validates. The result
    /// serializes to a file that reproduces the run.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.validate()?;
        let wl = self.geometry.wavelength;
        self.geometry.pitch.get_or_insert(wl);
        self.geometry.spacing.get_or_insert(100.0 * wl);
        self.geometry()?;
        let dir = self
            .data
            .dir
            .take()
            .unwrap_or_else(|| PathBuf::from("data").join(self.train.dataset.to_string()));
        self.data.dir = Some(absolute(&dir)?);
        self.output.dir = absolute(&self.output.dir)?;
        for (what, v) in [("train_samples", self.data.train_samples), ("test_samples", self.data.test_samples)] {
            if v == Some(0) {
                return Err(Error::Config(format!("{what} must be at least 1")));
            }
        }
        Ok(self)
    }

    pub fn geometry(&self) -> Result<PropagationGeometry> {
        let wl = self.geometry.wavelength;
        PropagationGeometry::new(
            self.train.side,
            self.geometry.pitch.unwrap_or(wl),
            wl,
            self.geometry.spacing.unwrap_or(100.0 * wl),
        )
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data
            .dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("data").join(self.train.dataset.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

/// Parses a dataset name as accepted on the command line.
pub fn parse_dataset(s: &str) -> std::result::Result<DatasetName, String> {
    match s {
        "mnist" => Ok(DatasetName::Mnist),
        "fashion" | "fashion_mnist" => Ok(DatasetName::FashionMnist),
        other => Err(format!("unknown dataset `{other}` (expected mnist or fashion)")),
    }
}
