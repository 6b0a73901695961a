//! Siamese 2-D feature extractor.

use rand::Rng;

use crate::conditioning::{BatchNorm, NormCache, NormStats};
use crate::error::{Error, Result};
use crate::geometry::SparseDisparityMap;
use crate::layers::{join, Conv2d, Module, ParamKind};
use crate::numerics::{relu, relu_backward, Tensor};
use crate::scalar::{cst, Scalar};

/// Appends `value / d_max` (fill constant at invalid pixels) as a fourth
/// channel.
pub fn input_fusion<T: Scalar>(rgb: &Tensor<T>, sparse: &SparseDisparityMap, d_max: f64) -> Result<Tensor<T>> {
    rgb.expect_shape("input_fusion", "image", &[3, sparse.height(), sparse.width()])?;
    if !(d_max > 0.0) {
        return Err(Error::invalid("input_fusion", "d_max must be positive"));
    }
    let mut data = rgb.data().to_vec();
    data.extend(sparse.values().iter().map(|&v| cst::<T>(v / d_max)));
    Tensor::from_vec(&[4, sparse.height(), sparse.width()], data)
}

#[derive(Debug, Clone)]
struct Block<T> {
    conv: Conv2d<T>,
    norm: Option<BatchNorm<T>>,
}

/// Conv + BN + ReLU blocks; the first block is a 5x5 stride-`s` conv and
/// the last is a plain 3x3 conv with bias so features can take either sign.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<T> {
    blocks: Vec<Block<T>>,
}

/// Per-block state of a batched forward pass.
#[derive(Debug, Clone)]
pub struct FeatureCache<T> {
    inputs: Vec<Vec<Tensor<T>>>,
    norms: Vec<Option<NormCache<T>>>,
    outputs: Vec<Vec<Tensor<T>>>,
}

fn stack<T: Scalar>(xs: &[Tensor<T>]) -> Result<Tensor<T>> {
    let mut shape = vec![xs.len()];
    shape.extend_from_slice(xs[0].shape());
    let mut data = Vec::with_capacity(xs.len() * xs[0].len());
    for x in xs {
        x.expect_shape("feature_batch", "stream", xs[0].shape())?;
        data.extend_from_slice(x.data());
    }
    Tensor::from_vec(&shape, data)
}

fn unstack<T: Scalar>(x: Tensor<T>) -> Vec<Tensor<T>> {
    let shape = x.shape()[1..].to_vec();
    let n: usize = shape.iter().product();
    x.into_data()
        .chunks(n)
        .map(|c| Tensor::from_vec(&shape, c.to_vec()).expect("chunk matches shape"))
        .collect()
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        channels: usize,
        blocks: usize,
        stride: usize,
        norm: impl Fn(usize) -> NormStats<T>,
        rng: &mut R,
    ) -> Self {
        assert!(blocks >= 2);
        let mut out = Vec::with_capacity(blocks);
        out.push(Block {
            conv: Conv2d::new(in_channels, channels, 5, stride, 2, false, rng),
            norm: Some(BatchNorm::with_stats(norm(channels), 2)),
        });
        for _ in 1..blocks - 1 {
            out.push(Block {
                conv: Conv2d::new(channels, channels, 3, 1, 1, false, rng),
                norm: Some(BatchNorm::with_stats(norm(channels), 2)),
            });
        }
        out.push(Block {
            conv: Conv2d::new(channels, channels, 3, 1, 1, true, rng),
            norm: None,
        });
        FeatureExtractor { blocks: out }
    }

    pub fn in_channels(&self) -> usize {
        self.blocks[0].conv.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().expect("at least two blocks").conv.out_channels()
    }

    /// Runs every stream through the shared weights. In training mode the
    /// streams form one normalization batch.
    pub fn forward_batch(&mut self, streams: &[Tensor<T>], training: bool) -> Result<(Vec<Tensor<T>>, FeatureCache<T>)> {
        if streams.is_empty() {
            return Err(Error::invalid("extract_features", "no input streams"));
        }
        for s in streams {
            s.expect_rank("extract_features", "image", 3)?;
            if s.shape()[0] != self.in_channels() {
                return Err(Error::shape("extract_features", "input channels", self.in_channels(), s.shape()[0]));
            }
        }
        let mut cache = FeatureCache {
            inputs: Vec::new(),
            norms: Vec::new(),
            outputs: Vec::new(),
        };
        let mut xs = streams.to_vec();
        for block in &mut self.blocks {
            let pre = xs.iter().map(|x| block.conv.forward(x)).collect::<Result<Vec<_>>>()?;
            let (ys, nc) = match &mut block.norm {
                Some(bn) => {
                    let (y, nc) = bn.forward(&stack(&pre)?, training)?;
                    (unstack(relu(&y)), Some(nc))
                }
                None => (pre, None),
            };
            cache.inputs.push(std::mem::replace(&mut xs, ys.clone()));
            cache.norms.push(nc);
            cache.outputs.push(ys);
        }
        Ok((xs, cache))
    }

    /// Accumulates parameter gradients; returns the input gradient per stream.
    pub fn backward(&mut self, cache: &FeatureCache<T>, grads: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let mut gs = grads.to_vec();
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            if let (Some(bn), Some(nc)) = (&mut block.norm, &cache.norms[i]) {
                let g_relu: Vec<_> = cache.outputs[i].iter().zip(&gs).map(|(y, g)| relu_backward(y, g)).collect();
                gs = unstack(bn.backward(nc, &stack(&g_relu)?)?);
            }
            gs = cache.inputs[i]
                .iter()
                .zip(&gs)
                .map(|(x, g)| block.conv.backward(x, g))
                .collect::<Result<Vec<_>>>()?;
        }
        Ok(gs)
    }

    pub fn extract(&mut self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let (mut out, _) = self.forward_batch(std::slice::from_ref(x), training)?;
        Ok(out.remove(0))
    }
}

impl<T: Scalar> Module<T> for FeatureExtractor<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("block{}", i + 1));
            b.conv.visit(&join(&p, "conv"), f);
            if let Some(n) = &b.norm {
                n.visit(&join(&p, "norm"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block{}", i + 1));
            b.conv.visit_mut(&join(&p, "conv"), f);
            if let Some(n) = &mut b.norm {
                n.visit_mut(&join(&p, "norm"), f);
            }
        }
    }
}

/// Features of a single stream.
pub fn extract_features<T: Scalar>(fused: &Tensor<T>, weights: &mut FeatureExtractor<T>, training: bool) -> Result<Tensor<T>> {
    weights.extract(fused, training)
}
