//! Run configuration: one TOML document covering every stage.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::centroid::CentroidParams;
use crate::coinc::CoincidenceConfig;
use crate::detector::CameraConfig;
use crate::error::{Error, Result};
use crate::image::DEFAULT_MIN_COUNTS;
use crate::optics::OpticsConfig;
use crate::pairgen::SourceConfig;
use crate::sample::TargetSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageConfig {
    pub bin: usize,
    pub min_counts: u32,
}

impl Default for ImageConfig {
    fn default() -> Self {
        ImageConfig { bin: 1, min_counts: DEFAULT_MIN_COUNTS }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub source: SourceConfig,
    pub sample: TargetSpec,
    pub optics: OpticsConfig,
    pub camera: CameraConfig,
    pub centroid: CentroidParams,
    pub coincidence: CoincidenceConfig,
    pub image: ImageConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.sample.validate()?;
        self.camera.validate()?;
        self.optics.validate((self.camera.sensor_size[0], self.camera.sensor_size[1]))?;
        self.centroid.validate()?;
        self.coincidence.validate()?;
        if self.image.bin == 0 {
            return Err(Error::config("image.bin must be >= 1"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        let unknown = unknown_keys(&value);
        if !unknown.is_empty() {
            return Err(Error::UnknownKeys(unknown));
        }
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every parameter, defaults included, as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// Read, check and validate a run configuration file.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    RunConfig::from_toml(&text)
}

/// A config with every optional field populated, so its serialised form
/// names every accepted key.
fn exemplar() -> toml::Table {
    let mut cfg = RunConfig::default();
    cfg.sample.edge_width = Some(1.0);
    cfg.sample.image_path = Some("x".into());
    toml::Table::try_from(&cfg).expect("config serialises")
}

fn unknown_keys(user: &toml::Table) -> Vec<String> {
    let mut out = BTreeSet::new();
    walk(user, &exemplar(), "", &mut out);
    out.into_iter().collect()
}

fn walk(user: &toml::Table, known: &toml::Table, prefix: &str, out: &mut BTreeSet<String>) {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match known.get(k) {
            None => {
                out.insert(path);
            }
            Some(toml::Value::Table(kt)) => {
                if let toml::Value::Table(ut) = v {
                    walk(ut, kt, &path, out);
                }
            }
            Some(toml::Value::Array(ka)) => {
                if let (Some(toml::Value::Table(kt)), toml::Value::Array(ua)) = (ka.first(), v) {
                    for (i, item) in ua.iter().enumerate() {
                        if let toml::Value::Table(ut) = item {
                            walk(ut, kt, &format!("{path}[{i}]"), out);
                        }
                    }
                }
            }
            Some(_) => {}
        }
    }
}
