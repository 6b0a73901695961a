//! Run configuration: TOML file, command-line overrides, resolved snapshot.

use std::path::{Path, PathBuf};

use fusion_stereo::data::SceneConfig;
use fusion_stereo::network::{NetworkConfig, Variant};
use fusion_stereo::trainer_eval::TrainConfig;
use fusion_stereo::{Error, Result};
use serde::{Deserialize, Serialize};

pub const PRECISION_ENV: &str = "FUSION_STEREO_PRECISION";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}`; expected f32 or f64"))),
        }
    }
}

/// Where frames come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// `scenes` synthetic frames with seeds `scene.seed ..`.
    Synthetic,
    Manifest(PathBuf),
}

impl std::str::FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "synthetic" {
            Ok(DataSource::Synthetic)
        } else if let Some(p) = s.strip_prefix("manifest:").filter(|p| !p.is_empty()) {
            Ok(DataSource::Manifest(PathBuf::from(p)))
        } else {
            Err(Error::Config(format!("unknown data source `{s}`; expected `synthetic` or `manifest:PATH`")))
        }
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataSource::Synthetic => f.write_str("synthetic"),
            DataSource::Manifest(p) => write!(f, "manifest:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// `synthetic` or `manifest:PATH`.
    pub source: String,
    /// Number of synthetic frames.
    pub scenes: usize,
    /// Rows kept from the bottom of manifest frames.
    pub crop_h: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: "synthetic".into(),
            scenes: 1,
            crop_h: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    pub densities: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            densities: vec![1.0, 0.5, 0.2, 0.1],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    pub frame: usize,
    /// `[top, left, height, width]`; the central quarter when absent.
    pub region: Option<[usize; 4]>,
    pub new_disparity: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            frame: 0,
            region: None,
            new_disparity: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsConfig {
    /// Variants timed with the desk network; all when empty.
    pub variants: Vec<Variant>,
    pub runs: usize,
    pub height: usize,
    pub width: usize,
    /// Sizes for the per-layer conditioning accounting table.
    pub channels: usize,
    pub levels: usize,
    pub d_hat: usize,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig {
            variants: Vec::new(),
            runs: 10,
            height: 32,
            width: 64,
            channels: 32,
            levels: 48,
            d_hat: 192,
        }
    }
}

/// Every effective setting of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub out: PathBuf,
    pub precision: Precision,
    /// Input checkpoint for every command except `train` and `params`.
    pub checkpoint: Option<PathBuf>,
    pub variant: Variant,
    pub data: DataConfig,
    pub scene: SceneConfig,
    /// Training network; the desk layout of `variant` when absent.
    pub network: Option<NetworkConfig>,
    pub train: TrainConfig,
    pub density: DensityConfig,
    pub sensitivity: SensitivityConfig,
    pub params: ParamsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            seed: 0,
            out: PathBuf::from("out"),
            precision: Precision::F32,
            checkpoint: None,
            variant: Variant::NONE,
            data: DataConfig::default(),
            scene: SceneConfig::default(),
            network: None,
            train: TrainConfig::default(),
            density: DensityConfig::default(),
            sensitivity: SensitivityConfig::default(),
            params: ParamsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn data_source(&self) -> Result<DataSource> {
        self.data.source.parse()
    }

    /// The training network with `variant` applied.
    pub fn network_config(&self) -> NetworkConfig {
        let mut cfg = self.network.clone().unwrap_or_else(|| NetworkConfig::desk(self.variant));
        cfg.network.variant = self.variant;
        cfg
    }

    /// Environment override first, then the configured value.
    pub fn resolve_precision(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(PRECISION_ENV) {
            self.precision = v
                .parse()
                .map_err(|_| Error::Config(format!("{PRECISION_ENV}=`{v}`; expected f32 or f64")))?;
        }
        Ok(())
    }

    pub fn write_resolved(&self) -> Result<()> {
        let path = self.out.join("config.resolved");
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
