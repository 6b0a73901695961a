//! Normalization layers of the cost regularizer: plain batch norm, naive
//! conditional BN, categorical / continuous / hierarchical CCVNorm, and the
//! feature-concat encoder. Every conditioned variant produces `(gamma, beta)`
//! fields of shape `[H, W, D, C]` consumed by [`apply_conditioned_norm`].

mod encoder;
mod naive;
mod norm;
mod tables;

use std::fmt;
use std::str::FromStr;

pub use encoder::{
    ccvnorm_continuous_params, encoder_input, feature_concat_encode, ContinuousEncoder, EncodedLidar, FeatureConcatEncoder,
};
pub use naive::{naive_cbn_params, NaiveCbn};
pub use norm::{
    apply_conditioned_norm, bn3d, conditioned_backward, conditioned_forward, normalize_backward, BatchNorm, NormCache,
    NormStats, DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
pub use tables::{ccvnorm_categorical_params, hierccvnorm_params, lidar_bins, CategoricalTable, HierTable};

use crate::error::{Error, Result};

/// How the sparse LiDAR map enters the cost regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditioningKind {
    None,
    FeatureConcat,
    NaiveCbn,
    Categorical,
    Continuous,
    Hierarchical,
}

impl ConditioningKind {
    pub const ALL: [ConditioningKind; 6] = [
        ConditioningKind::None,
        ConditioningKind::FeatureConcat,
        ConditioningKind::NaiveCbn,
        ConditioningKind::Categorical,
        ConditioningKind::Continuous,
        ConditioningKind::Hierarchical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConditioningKind::None => "none",
            ConditioningKind::FeatureConcat => "feature_concat",
            ConditioningKind::NaiveCbn => "naive_cbn",
            ConditioningKind::Categorical => "ccvnorm_cat",
            ConditioningKind::Continuous => "ccvnorm_cont",
            ConditioningKind::Hierarchical => "hier_ccvnorm",
        }
    }

    /// Whether the kind replaces batch norm at the conditioned layers.
    pub fn is_normalization(self) -> bool {
        matches!(
            self,
            ConditioningKind::NaiveCbn | ConditioningKind::Categorical | ConditioningKind::Continuous | ConditioningKind::Hierarchical
        )
    }
}

impl fmt::Display for ConditioningKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConditioningKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown conditioning variant `{s}`; valid: {}", names.join(", ")))
        })
    }
}

/// Sizes that determine the conditioning parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditioningDims {
    /// Feature channels `C` of the conditioned layers.
    pub channels: usize,
    /// Disparity levels `D` of the cost volume.
    pub levels: usize,
    pub d_hat: usize,
    pub n_layers: usize,
    /// Width of the LiDAR encoders (continuous and feature-concat).
    pub encoder_channels: usize,
    pub mlp_hidden: usize,
}

impl ConditioningDims {
    pub fn new(channels: usize, levels: usize, d_hat: usize, n_layers: usize) -> Self {
        ConditioningDims {
            channels,
            levels,
            d_hat,
            n_layers,
            encoder_channels: 8,
            mlp_hidden: 16,
        }
    }
}

fn residual_encoder_count(cin: usize, e: usize) -> usize {
    (cin * e * 9 + e) + 2 * (e * e * 9 + e)
}

/// Learnable conditioning parameters of a whole network.
///
/// Per conditioned layer: categorical `2*D_hat*D*C + 2*D*C`, hierarchical
/// `2*D_hat*C + 4*D*C + 2*D*C` (the last term is the invalid branch). The
/// continuous variant adds its shared trunk once; feature-concat counts only
/// its encoder.
pub fn param_count(variant: &str, dims: &ConditioningDims) -> Result<usize> {
    let kind: ConditioningKind = variant.parse()?;
    let ConditioningDims {
        channels: c,
        levels: d,
        d_hat,
        n_layers: n,
        encoder_channels: e,
        mlp_hidden: hd,
    } = *dims;
    if [c, d, d_hat, n, e, hd].contains(&0) {
        return Err(Error::invalid("param_count", "all sizes must be positive"));
    }
    Ok(match kind {
        ConditioningKind::None => 0,
        ConditioningKind::Categorical => n * (2 * d_hat * d * c + 2 * d * c),
        ConditioningKind::Hierarchical => n * (2 * d_hat * c + 4 * d * c + 2 * d * c),
        ConditioningKind::Continuous => residual_encoder_count(2, e) + n * (e * 2 * d * c + 2 * d * c),
        ConditioningKind::NaiveCbn => n * (2 * hd + 2 * c * hd + 2 * c + 2 * c),
        ConditioningKind::FeatureConcat => residual_encoder_count(2, e),
    })
}
