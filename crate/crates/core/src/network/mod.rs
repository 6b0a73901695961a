//! The assembled network: input fusion, siamese feature extractor, cost
//! volume, conditioned 3-D regularizer, trilinear upsampling and soft-argmin.

mod config;
mod features;
mod regularizer;
mod upsample;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ConditioningSection, FeatureSection, NetworkConfig, NetworkSection, RegularizerSection, Variant};
pub use features::{extract_features, input_fusion, FeatureCache, FeatureExtractor};
pub use regularizer::{Conditioner, ConditionerSpec, ConditionerState, RegNorm, RegularizeCache, Regularizer};
pub use upsample::Upsampler;

use crate::conditioning::NormStats;
use crate::cost_volume::{build_cost_volume, build_cost_volume_backward, soft_argmin, soft_argmin_backward, CostVolume};
use crate::error::{Error, Result};
use crate::geometry::{CameraCalibration, SparseDisparityMap};
use crate::layers::{Module, ParamKind};
use crate::numerics::{Checkpoint, Tensor};
use crate::scalar::{cst, Scalar};

/// One rectified stereo pair with its LiDAR maps and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSample<T> {
    /// `[3, H, W]` in `[0, 1]`.
    pub left_rgb: Tensor<T>,
    pub right_rgb: Tensor<T>,
    pub lidar_left: SparseDisparityMap,
    pub lidar_right: SparseDisparityMap,
    /// `[H, W]` in pixels; meaningful where `gt_valid` holds.
    pub gt_disparity: Tensor<T>,
    pub gt_valid: Vec<bool>,
    pub calib: CameraCalibration,
}

impl<T: Scalar> StereoSample<T> {
    pub fn height(&self) -> usize {
        self.gt_disparity.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.gt_disparity.shape()[1]
    }

    /// Checks extents and, when given, that valid ground truth lies below `d_max`.
    pub fn validate(&self, d_max: Option<f64>) -> Result<()> {
        self.gt_disparity.expect_rank("stereo_sample", "ground truth", 2)?;
        let (h, w) = (self.height(), self.width());
        self.left_rgb.expect_shape("stereo_sample", "left image", &[3, h, w])?;
        self.right_rgb.expect_shape("stereo_sample", "right image", &[3, h, w])?;
        for (name, m) in [("left LiDAR map", &self.lidar_left), ("right LiDAR map", &self.lidar_right)] {
            if (m.height(), m.width()) != (h, w) {
                return Err(Error::shape("stereo_sample", name, (h, w), (m.height(), m.width())));
            }
        }
        if (self.calib.image_h, self.calib.image_w) != (h, w) {
            return Err(Error::shape("stereo_sample", "calibration extent", (h, w), (self.calib.image_h, self.calib.image_w)));
        }
        if self.gt_valid.len() != h * w {
            return Err(Error::shape("stereo_sample", "ground-truth mask", h * w, self.gt_valid.len()));
        }
        if let Some(d_max) = d_max {
            for (&v, &ok) in self.gt_disparity.data().iter().zip(&self.gt_valid) {
                if ok && !(v.to_f64_lossy() >= 0.0 && v.to_f64_lossy() < d_max) {
                    return Err(Error::invalid("stereo_sample", format!("ground truth {} outside [0, {d_max})", v.to_f64_lossy())));
                }
            }
        }
        Ok(())
    }

    pub fn n_gt_valid(&self) -> usize {
        self.gt_valid.iter().filter(|&&v| v).count()
    }

    /// `[H, W]` 0/1 mask of supervised pixels.
    pub fn gt_mask(&self) -> Tensor<T> {
        let data = self.gt_valid.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
        Tensor::from_vec(self.gt_disparity.shape(), data).expect("validated extents")
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        let (h, w) = (self.height(), self.width());
        if top + height > h || left + width > w || height == 0 || width == 0 {
            return Err(Error::invalid(
                "crop",
                format!("window {height}x{width} at ({top}, {left}) does not fit in {h}x{w}"),
            ));
        }
        let crop_planes = |t: &Tensor<T>, planes: usize| {
            let mut out = Vec::with_capacity(planes * height * width);
            for p in 0..planes {
                for r in top..top + height {
                    let off = (p * h + r) * w + left;
                    out.extend_from_slice(&t.data()[off..off + width]);
                }
            }
            out
        };
        let mut valid = Vec::with_capacity(height * width);
        for r in top..top + height {
            valid.extend_from_slice(&self.gt_valid[r * w + left..r * w + left + width]);
        }
        Ok(StereoSample {
            left_rgb: Tensor::from_vec(&[3, height, width], crop_planes(&self.left_rgb, 3))?,
            right_rgb: Tensor::from_vec(&[3, height, width], crop_planes(&self.right_rgb, 3))?,
            lidar_left: self.lidar_left.crop(top, left, height, width),
            lidar_right: self.lidar_right.crop(top, left, height, width),
            gt_disparity: Tensor::from_vec(&[height, width], crop_planes(&self.gt_disparity, 1))?,
            gt_valid: valid,
            calib: self.calib.crop(top, left, height, width)?,
        })
    }

    pub fn with_lidar(&self, lidar_left: SparseDisparityMap, lidar_right: SparseDisparityMap) -> Self {
        StereoSample {
            lidar_left,
            lidar_right,
            ..self.clone()
        }
    }

    pub fn cast<U: Scalar>(&self) -> StereoSample<U> {
        StereoSample {
            left_rgb: self.left_rgb.cast(),
            right_rgb: self.right_rgb.cast(),
            lidar_left: self.lidar_left.clone(),
            lidar_right: self.lidar_right.clone(),
            gt_disparity: self.gt_disparity.cast(),
            gt_valid: self.gt_valid.clone(),
            calib: self.calib,
        }
    }
}

/// Everything [`Network::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    features: FeatureCache<T>,
    left: Tensor<T>,
    right: Tensor<T>,
    regularize: RegularizeCache<T>,
    upsampler: Upsampler,
    upsampled: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetworkConfig,
    pub features: FeatureExtractor<T>,
    pub conditioner: Conditioner<T>,
    pub regularizer: Regularizer<T>,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with weights drawn from a generator seeded by `seed`.
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config.conditioning;
        let (eps, mom) = (cst::<T>(c.epsilon), cst::<T>(c.momentum));
        let norm = |ch| NormStats::with_params(ch, eps, mom);
        let variant = config.variant();
        let features = FeatureExtractor::new(
            config.input_channels(),
            config.features.channels,
            config.features.blocks,
            config.downsample(),
            norm,
            &mut rng,
        );
        let ids = config.active_conditioned_layers().to_vec();
        let dims = config.conditioning_dims()?;
        let conditioner = Conditioner::new(
            &ConditionerSpec {
                kind: variant.conditioning,
                layer_ids: ids.clone(),
                channels: dims.channels,
                levels: dims.levels,
                d_hat: c.d_hat,
                encoder_channels: c.encoder_channels,
                mlp_hidden: c.mlp_hidden,
            },
            &mut rng,
        );
        let in_ch = 2 * config.features.channels + conditioner.extra_channels();
        let regularizer = Regularizer::new(in_ch, &config.regularizer.channels, &ids, norm, &mut rng);
        Ok(Network {
            config: config.clone(),
            features,
            conditioner,
            regularizer,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant()
    }

    fn check_sample(&self, sample: &StereoSample<T>) -> Result<()> {
        sample.validate(None)?;
        let s = self.config.downsample();
        if sample.height() % s != 0 || sample.width() % s != 0 {
            return Err(Error::invalid(
                "forward",
                format!("image extent {}x{} is not divisible by the stride {s}", sample.height(), sample.width()),
            ));
        }
        Ok(())
    }

    /// Volume-level LiDAR map and its disparity range.
    fn feature_lidar(&self, lidar_left: &SparseDisparityMap) -> (SparseDisparityMap, f64) {
        let s = self.config.downsample();
        (lidar_left.downsample(s), (self.config.d_max() / s) as f64)
    }

    /// `[1, h, w, D]` regularized volume from a cost volume and the
    /// full-resolution left LiDAR map.
    pub fn regularize(
        &mut self,
        volume: &CostVolume<T>,
        lidar_left: &SparseDisparityMap,
        training: bool,
    ) -> Result<(Tensor<T>, RegularizeCache<T>)> {
        let (map, d_max) = self.feature_lidar(lidar_left);
        self.regularizer.forward(volume.tensor(), &map, d_max, &self.conditioner, training)
    }

    /// Disparity `[H, W]` in `[0, d_max - 1]`. Training mode normalizes with
    /// batch moments and updates the running estimates.
    pub fn forward(&mut self, sample: &StereoSample<T>, training: bool) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_sample(sample)?;
        let d_max = self.config.d_max();
        let fuse = |rgb: &Tensor<T>, map: &SparseDisparityMap| {
            if self.config.variant().input_fusion {
                input_fusion(rgb, map, d_max as f64)
            } else {
                Ok(rgb.clone())
            }
        };
        let streams = [fuse(&sample.left_rgb, &sample.lidar_left)?, fuse(&sample.right_rgb, &sample.lidar_right)?];
        let (mut feats, fcache) = self.features.forward_batch(&streams, training)?;
        let right = feats.pop().expect("two streams");
        let left = feats.pop().expect("two streams");
        let levels = self.config.volume_levels();
        let volume = build_cost_volume(&left, &right, levels)?;
        let (low, rcache) = self.regularize(&volume, &sample.lidar_left, training)?;
        let (h, w) = (low.shape()[1], low.shape()[2]);
        let upsampler = Upsampler::new([h, w, levels], [sample.height(), sample.width(), d_max]);
        let upsampled = upsampler.forward(&low)?;
        let disparity = soft_argmin(&upsampled, T::one())?;
        Ok((
            disparity,
            ForwardCache {
                features: fcache,
                left,
                right,
                regularize: rcache,
                upsampler,
                upsampled,
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d disparity = grad`.
    pub fn backward(&mut self, cache: &ForwardCache<T>, grad: &Tensor<T>) -> Result<()> {
        let g = soft_argmin_backward(&cache.upsampled, T::one(), grad)?;
        let g = cache.upsampler.backward(&g)?;
        let g = self.regularizer.backward(&cache.regularize, &mut self.conditioner, &g)?;
        let (gl, gr) = build_cost_volume_backward(&cache.left, &cache.right, self.config.volume_levels(), &g)?;
        self.features.backward(&cache.features, &[gl, gr])?;
        Ok(())
    }

    /// Inference-mode disparity.
    pub fn predict(&mut self, sample: &StereoSample<T>) -> Result<Tensor<T>> {
        Ok(self.forward(sample, false)?.0)
    }

    /// Learnable parameters owned by the conditioning path.
    pub fn conditioning_param_count(&self) -> usize {
        self.conditioner.n_learnable()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.to_toml());
        self.visit("", &mut |name, t, _| ck.push(name, t));
        ck
    }

    /// Rebuilds a network from a checkpoint whose meta holds the config.
    ///
    /// Fails on a missing, extra or misshapen tensor and on non-finite values.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = NetworkConfig::from_toml(&ck.meta)?;
        let mut net = Network::new(&config, 0)?;
        let mut err = None;
        let mut seen = 0;
        net.visit_mut("", &mut |name, t, _| {
            if err.is_some() {
                return;
            }
            seen += 1;
            err = match ck.get(name) {
                None => Some(Error::Config(format!("checkpoint has no entry `{name}`"))),
                Some(e) if e.shape != t.shape() => Some(Error::shape("checkpoint", name.to_string(), t.shape(), &e.shape)),
                Some(e) if e.values.iter().any(|v| !v.is_finite()) => Some(Error::NonFinite(name.to_string())),
                Some(e) => {
                    for (dst, &v) in t.data_mut().iter_mut().zip(&e.values) {
                        *dst = T::from_f64_lossy(v);
                    }
                    None
                }
            };
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != ck.entries().len() {
            return Err(Error::Config(format!(
                "checkpoint has {} entries, network expects {seen}",
                ck.entries().len()
            )));
        }
        net.conditioner.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ck = Checkpoint::load(path)?;
        Network::from_checkpoint(&ck).map_err(|e| match e {
            Error::Config(msg) => Error::format(path, msg),
            other => other,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut out = Network::<U>::new(&self.config, 0).expect("config already validated");
        let mut src = Vec::new();
        self.visit("", &mut |_, t, _| src.push(t.cast::<U>()));
        let mut it = src.into_iter();
        out.visit_mut("", &mut |_, t, _| {
            let s = it.next().expect("same architecture");
            t.data_mut().copy_from_slice(s.data());
        });
        out
    }
}

impl<T: Scalar> Module<T> for Network<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        use crate::layers::join;
        self.features.visit(&join(prefix, "features"), f);
        self.conditioner.visit(&join(prefix, "conditioning"), f);
        self.regularizer.visit(&join(prefix, "regularizer"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        use crate::layers::join;
        self.features.visit_mut(&join(prefix, "features"), f);
        self.conditioner.visit_mut(&join(prefix, "conditioning"), f);
        self.regularizer.visit_mut(&join(prefix, "regularizer"), f);
    }
}
