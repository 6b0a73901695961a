use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::SparseDisparityMap;
use crate::layers::{join, Conv2d, Module, ParamKind, ResidualCache, ResidualEncoder};
use crate::numerics::Tensor;
use crate::scalar::{cst, Scalar};

/// Two-channel image of a sparse map: scaled disparity (`value / d_max`,
/// fill constant at invalid pixels) and the 0/1 validity mask.
pub fn encoder_input<T: Scalar>(map: &SparseDisparityMap, d_max: f64) -> Tensor<T> {
    let n = map.values().len();
    let mut data = Vec::with_capacity(2 * n);
    data.extend(map.values().iter().map(|&v| cst::<T>(v / d_max)));
    data.extend(map.valid().iter().map(|&ok| if ok { T::one() } else { T::zero() }));
    Tensor::from_vec(&[2, map.height(), map.width()], data).expect("map extents are positive")
}

/// Output of a shared LiDAR encoder pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodedLidar<T> {
    pub features: Tensor<T>,
    cache: ResidualCache<T>,
}

/// Continuous CCVNorm: one shared residual trunk over the sparse map and a
/// 1x1 head per conditioned layer producing `2 * D * C` channels.
#[derive(Debug, Clone)]
pub struct ContinuousEncoder<T> {
    pub trunk: ResidualEncoder<T>,
    heads: Vec<(usize, Conv2d<T>)>,
    levels: usize,
    channels: usize,
}

impl<T: Scalar> ContinuousEncoder<T> {
    pub fn new<R: Rng + ?Sized>(encoder_channels: usize, levels: usize, channels: usize, layer_ids: &[usize], rng: &mut R) -> Self {
        let trunk = ResidualEncoder::new(2, encoder_channels, rng);
        let heads = layer_ids
            .iter()
            .map(|&id| {
                let mut head = Conv2d::new(encoder_channels, 2 * levels * channels, 1, 1, 0, true, rng);
                head.weight = Tensor::randn(head.weight.shape(), 0.0, 0.01, rng);
                let bias = head.bias.as_mut().expect("head has bias");
                bias.data_mut()[..levels * channels].iter_mut().for_each(|v| *v = T::one());
                (id, head)
            })
            .collect();
        ContinuousEncoder {
            trunk,
            heads,
            levels,
            channels,
        }
    }

    pub fn layer_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.heads.iter().map(|(id, _)| *id)
    }

    fn head(&self, layer_id: usize) -> Result<&Conv2d<T>> {
        self.heads
            .iter()
            .find(|(id, _)| *id == layer_id)
            .map(|(_, h)| h)
            .ok_or(Error::UnregisteredLayer(layer_id))
    }

    fn head_mut(&mut self, layer_id: usize) -> Result<&mut Conv2d<T>> {
        self.heads
            .iter_mut()
            .find(|(id, _)| *id == layer_id)
            .map(|(_, h)| h)
            .ok_or(Error::UnregisteredLayer(layer_id))
    }

    pub fn encode(&self, map: &SparseDisparityMap, d_max: f64) -> Result<EncodedLidar<T>> {
        let (features, cache) = self.trunk.forward(&encoder_input(map, d_max))?;
        Ok(EncodedLidar { features, cache })
    }

    /// `(gamma, beta)` fields `[H, W, D, C]` from the head of `layer_id`.
    pub fn head_params(&self, enc: &EncodedLidar<T>, layer_id: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let out = self.head(layer_id)?.forward(&enc.features)?;
        let (h, w) = (out.shape()[1], out.shape()[2]);
        let block = self.levels * self.channels;
        let npx = h * w;
        let mut g = vec![T::zero(); npx * block];
        let mut b = vec![T::zero(); npx * block];
        for j in 0..block {
            let gsrc = &out.data()[j * npx..(j + 1) * npx];
            let bsrc = &out.data()[(block + j) * npx..(block + j + 1) * npx];
            for p in 0..npx {
                g[p * block + j] = gsrc[p];
                b[p * block + j] = bsrc[p];
            }
        }
        let shape = [h, w, self.levels, self.channels];
        Ok((Tensor::from_vec(&shape, g)?, Tensor::from_vec(&shape, b)?))
    }

    /// Accumulates head gradients; returns the gradient w.r.t. trunk features.
    pub fn head_backward(
        &mut self,
        enc: &EncodedLidar<T>,
        layer_id: usize,
        grad_gamma: &Tensor<T>,
        grad_beta: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let (h, w) = (enc.features.shape()[1], enc.features.shape()[2]);
        let block = self.levels * self.channels;
        let shape = [h, w, self.levels, self.channels];
        grad_gamma.expect_shape("ccvnorm_continuous", "gamma gradient", &shape)?;
        grad_beta.expect_shape("ccvnorm_continuous", "beta gradient", &shape)?;
        let npx = h * w;
        let mut gout = vec![T::zero(); 2 * block * npx];
        for j in 0..block {
            for p in 0..npx {
                gout[j * npx + p] = grad_gamma.data()[p * block + j];
                gout[(block + j) * npx + p] = grad_beta.data()[p * block + j];
            }
        }
        let gout = Tensor::from_vec(&[2 * block, h, w], gout)?;
        self.head_mut(layer_id)?.backward(&enc.features, &gout)
    }

    pub fn trunk_backward(&mut self, enc: &EncodedLidar<T>, grad_features: &Tensor<T>) -> Result<()> {
        self.trunk.backward(&enc.cache, &enc.features, grad_features)?;
        Ok(())
    }
}

impl<T: Scalar> Module<T> for ContinuousEncoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.trunk.visit(&join(prefix, "encoder"), f);
        for (id, h) in &self.heads {
            h.visit(&join(prefix, &format!("layer{id}.head")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.trunk.visit_mut(&join(prefix, "encoder"), f);
        for (id, h) in &mut self.heads {
            h.visit_mut(&join(prefix, &format!("layer{id}.head")), f);
        }
    }
}

pub fn ccvnorm_continuous_params<T: Scalar>(
    map: &SparseDisparityMap,
    encoder: &ContinuousEncoder<T>,
    layer_id: usize,
    d_max: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let enc = encoder.encode(map, d_max)?;
    encoder.head_params(&enc, layer_id)
}

/// Feature-concat ablation: LiDAR features from a residual encoder,
/// replicated along the disparity axis.
#[derive(Debug, Clone)]
pub struct FeatureConcatEncoder<T> {
    pub trunk: ResidualEncoder<T>,
}

impl<T: Scalar> FeatureConcatEncoder<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        FeatureConcatEncoder {
            trunk: ResidualEncoder::new(2, channels, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.trunk.out_channels()
    }

    pub fn encode(&self, map: &SparseDisparityMap, d_max: f64) -> Result<EncodedLidar<T>> {
        let (features, cache) = self.trunk.forward(&encoder_input(map, d_max))?;
        Ok(EncodedLidar { features, cache })
    }

    /// `[C_l, H, W]` features to `[C_l, H, W, D]`.
    pub fn broadcast(features: &Tensor<T>, levels: usize) -> Tensor<T> {
        let mut out = Vec::with_capacity(features.len() * levels);
        for &v in features.data() {
            out.extend(std::iter::repeat_n(v, levels));
        }
        let s = features.shape();
        Tensor::from_vec(&[s[0], s[1], s[2], levels], out).expect("positive extents")
    }

    /// `grad` is w.r.t. the broadcast `[C_l, H, W, D]` block.
    pub fn backward(&mut self, enc: &EncodedLidar<T>, grad: &Tensor<T>) -> Result<()> {
        let levels = grad.shape()[3];
        let g: Vec<T> = grad.data().chunks(levels).map(|c| c.iter().copied().sum()).collect();
        let g = Tensor::from_vec(enc.features.shape(), g)?;
        self.trunk.backward(&enc.cache, &enc.features, &g)?;
        Ok(())
    }
}

impl<T: Scalar> Module<T> for FeatureConcatEncoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.trunk.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.trunk.visit_mut(prefix, f);
    }
}

pub fn feature_concat_encode<T: Scalar>(
    map: &SparseDisparityMap,
    encoder: &FeatureConcatEncoder<T>,
    levels: usize,
    d_max: f64,
) -> Result<Tensor<T>> {
    let enc = encoder.encode(map, d_max)?;
    Ok(FeatureConcatEncoder::broadcast(&enc.features, levels))
}
