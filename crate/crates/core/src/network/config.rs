use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditioningDims, ConditioningKind, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_FILL;

/// Fusion variant: optional input fusion plus a regularizer conditioning kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub input_fusion: bool,
    pub conditioning: ConditioningKind,
}

impl Variant {
    pub const NONE: Variant = Variant::new(false, ConditioningKind::None);
    pub const INPUT_FUSION_ONLY: Variant = Variant::new(true, ConditioningKind::None);

    pub const fn new(input_fusion: bool, conditioning: ConditioningKind) -> Self {
        Variant {
            input_fusion,
            conditioning,
        }
    }

    pub fn all() -> Vec<Variant> {
        let mut v = vec![Variant::NONE, Variant::INPUT_FUSION_ONLY];
        for k in ConditioningKind::ALL.into_iter().skip(1) {
            v.push(Variant::new(false, k));
        }
        for k in ConditioningKind::ALL.into_iter().skip(1) {
            if k != ConditioningKind::NaiveCbn {
                v.push(Variant::new(true, k));
            }
        }
        v
    }

    pub fn name(&self) -> String {
        match (self.input_fusion, self.conditioning) {
            (false, k) => k.name().to_string(),
            (true, ConditioningKind::None) => "input_fusion_only".to_string(),
            (true, k) => format!("if_{}", k.name()),
        }
    }

    pub fn uses_lidar(&self) -> bool {
        self.input_fusion || self.conditioning != ConditioningKind::None
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::all().into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<String> = Variant::all().iter().map(Variant::name).collect();
            Error::Config(format!("unknown variant `{s}`; valid variants: {}", names.join(", ")))
        })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub variant: Variant,
    /// Full-resolution maximum disparity; outputs lie in `[0, d_max - 1]`.
    pub d_max: usize,
    /// Feature stride of the siamese extractor.
    pub downsample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSection {
    pub channels: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSection {
    /// Output channels of each 3-D conv block, first to last.
    pub channels: Vec<usize>,
    /// 1-based block indices whose normalization is conditioned.
    pub conditioned_layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningSection {
    /// Lookup-table levels; defaults to `d_max`.
    pub d_hat: usize,
    pub encoder_channels: usize,
    pub mlp_hidden: usize,
    pub fill: f64,
    pub epsilon: f64,
    pub momentum: f64,
}

/// Architecture of the network, persisted as TOML with one table per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub network: NetworkSection,
    pub features: FeatureSection,
    pub regularizer: RegularizerSection,
    pub conditioning: ConditioningSection,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::desk(Variant::NONE)
    }
}

impl NetworkConfig {
    /// Desk-scale defaults: `d_max = 16`, stride 2, 16 feature channels,
    /// six 8-channel regularizer blocks, every one conditioned.
    pub fn desk(variant: Variant) -> Self {
        NetworkConfig {
            network: NetworkSection {
                variant,
                d_max: 16,
                downsample: 2,
            },
            features: FeatureSection { channels: 16, blocks: 4 },
            regularizer: RegularizerSection {
                channels: vec![8; 6],
                conditioned_layers: vec![1, 2, 3, 4, 5, 6],
            },
            conditioning: ConditioningSection {
                d_hat: 16,
                encoder_channels: 8,
                mlp_hidden: 16,
                fill: DEFAULT_FILL,
                epsilon: DEFAULT_EPSILON,
                momentum: DEFAULT_MOMENTUM,
            },
        }
    }

    pub fn variant(&self) -> Variant {
        self.network.variant
    }

    pub fn d_max(&self) -> usize {
        self.network.d_max
    }

    pub fn downsample(&self) -> usize {
        self.network.downsample
    }

    /// Disparity levels of the feature-resolution cost volume.
    pub fn volume_levels(&self) -> usize {
        self.network.d_max / self.network.downsample
    }

    pub fn input_channels(&self) -> usize {
        if self.network.variant.input_fusion {
            4
        } else {
            3
        }
    }

    /// Conditioned layer ids actually in effect (empty unless the variant
    /// replaces normalization).
    pub fn active_conditioned_layers(&self) -> &[usize] {
        if self.network.variant.conditioning.is_normalization() {
            &self.regularizer.conditioned_layers
        } else {
            &[]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.network;
        if n.downsample == 0 || n.d_max == 0 || n.d_max % n.downsample != 0 {
            return Err(Error::Config(format!(
                "d_max ({}) must be a positive multiple of downsample ({})",
                n.d_max, n.downsample
            )));
        }
        if self.volume_levels() < 2 {
            return Err(Error::Config("need at least 2 cost-volume disparity levels".into()));
        }
        if self.features.channels == 0 || self.features.blocks < 2 {
            return Err(Error::Config("feature extractor needs channels > 0 and at least 2 blocks".into()));
        }
        let r = &self.regularizer;
        if r.channels.is_empty() || r.channels.contains(&0) {
            return Err(Error::Config("regularizer needs at least one block with positive channels".into()));
        }
        for &id in &r.conditioned_layers {
            if id == 0 || id > r.channels.len() {
                return Err(Error::Config(format!(
                    "conditioned layer {id} does not exist (regularizer has blocks 1..={})",
                    r.channels.len()
                )));
            }
        }
        let mut ids = r.conditioned_layers.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != r.conditioned_layers.len() {
            return Err(Error::Config("duplicate conditioned layer id".into()));
        }
        let c = &self.conditioning;
        if c.d_hat < 2 {
            return Err(Error::Config("d_hat must be >= 2".into()));
        }
        if c.encoder_channels == 0 || c.mlp_hidden == 0 {
            return Err(Error::Config("encoder_channels and mlp_hidden must be positive".into()));
        }
        if !(c.epsilon > 0.0) || !(0.0..=1.0).contains(&c.momentum) || !c.fill.is_finite() {
            return Err(Error::Config("need epsilon > 0, momentum in [0, 1], finite fill".into()));
        }
        Ok(())
    }

    /// Conditioning sizes, using the channel count of the conditioned layers.
    ///
    /// Errors if the conditioned layers do not share one channel count.
    pub fn conditioning_dims(&self) -> Result<ConditioningDims> {
        let ids = &self.regularizer.conditioned_layers;
        let chans: Vec<usize> = ids.iter().map(|&i| self.regularizer.channels[i - 1]).collect();
        let c = chans.first().copied().unwrap_or(self.regularizer.channels[0]);
        if chans.iter().any(|&x| x != c) {
            return Err(Error::Config("conditioned layers differ in channel count".into()));
        }
        Ok(ConditioningDims {
            channels: c,
            levels: self.volume_levels(),
            d_hat: self.conditioning.d_hat,
            n_layers: ids.len().max(1),
            encoder_channels: self.conditioning.encoder_channels,
            mlp_hidden: self.conditioning.mlp_hidden,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: NetworkConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}
