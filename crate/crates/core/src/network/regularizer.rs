//! 3-D cost regularizer with per-layer pluggable normalization.

use rand::Rng;

use crate::conditioning::{
    conditioned_backward, conditioned_forward, BatchNorm, CategoricalTable, ConditioningKind, ContinuousEncoder, EncodedLidar,
    FeatureConcatEncoder, HierTable, NaiveCbn, NormCache, NormStats,
};
use crate::error::{Error, Result};
use crate::geometry::SparseDisparityMap;
use crate::layers::{join, Conv3d, Module, ParamKind};
use crate::numerics::{relu, relu_backward, Tensor};
use crate::scalar::Scalar;

/// Source of `(gamma, beta)` fields for the conditioned layers, or of the
/// extra input channels in the feature-concat ablation.
#[derive(Debug, Clone)]
pub enum Conditioner<T> {
    None,
    FeatureConcat(FeatureConcatEncoder<T>),
    Naive(Vec<(usize, NaiveCbn<T>)>),
    Categorical(Vec<(usize, CategoricalTable<T>)>),
    Hierarchical(Vec<(usize, HierTable<T>)>),
    Continuous(ContinuousEncoder<T>),
}

/// Sizes needed to build a [`Conditioner`].
#[derive(Debug, Clone)]
pub struct ConditionerSpec {
    pub kind: ConditioningKind,
    pub layer_ids: Vec<usize>,
    pub channels: usize,
    pub levels: usize,
    pub d_hat: usize,
    pub encoder_channels: usize,
    pub mlp_hidden: usize,
}

fn find<'a, P>(list: &'a [(usize, P)], id: usize) -> Result<&'a P> {
    list.iter().find(|(i, _)| *i == id).map(|(_, p)| p).ok_or(Error::UnregisteredLayer(id))
}

fn find_mut<P>(list: &mut [(usize, P)], id: usize) -> Result<&mut P> {
    list.iter_mut().find(|(i, _)| *i == id).map(|(_, p)| p).ok_or(Error::UnregisteredLayer(id))
}

/// Per-sample state of a conditioner (shared encoder activations).
#[derive(Debug, Clone)]
pub struct ConditionerState<T> {
    map: SparseDisparityMap,
    d_max: f64,
    encoded: Option<EncodedLidar<T>>,
}

impl<T: Scalar> Conditioner<T> {
    pub fn new<R: Rng + ?Sized>(spec: &ConditionerSpec, rng: &mut R) -> Self {
        let ids = &spec.layer_ids;
        let (c, d, dh) = (spec.channels, spec.levels, spec.d_hat);
        match spec.kind {
            ConditioningKind::None => Conditioner::None,
            ConditioningKind::FeatureConcat => Conditioner::FeatureConcat(FeatureConcatEncoder::new(spec.encoder_channels, rng)),
            ConditioningKind::NaiveCbn => {
                Conditioner::Naive(ids.iter().map(|&i| (i, NaiveCbn::new(spec.mlp_hidden, d, c, rng))).collect())
            }
            ConditioningKind::Categorical => {
                Conditioner::Categorical(ids.iter().map(|&i| (i, CategoricalTable::new(dh, d, c, rng))).collect())
            }
            ConditioningKind::Hierarchical => {
                Conditioner::Hierarchical(ids.iter().map(|&i| (i, HierTable::new(dh, d, c, rng))).collect())
            }
            ConditioningKind::Continuous => {
                Conditioner::Continuous(ContinuousEncoder::new(spec.encoder_channels, d, c, ids, rng))
            }
        }
    }

    /// Extra regularizer input channels contributed by the conditioner.
    pub fn extra_channels(&self) -> usize {
        match self {
            Conditioner::FeatureConcat(e) => e.channels(),
            _ => 0,
        }
    }

    /// Runs shared encoders on the feature-resolution map.
    pub fn prepare(&self, map: &SparseDisparityMap, d_max: f64) -> Result<ConditionerState<T>> {
        let encoded = match self {
            Conditioner::FeatureConcat(e) => Some(e.encode(map, d_max)?),
            Conditioner::Continuous(e) => Some(e.encode(map, d_max)?),
            _ => None,
        };
        Ok(ConditionerState {
            map: map.clone(),
            d_max,
            encoded,
        })
    }

    /// `(gamma, beta)` fields `[H, W, D, C]` for a conditioned layer.
    pub fn params(&self, state: &ConditionerState<T>, layer_id: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let (map, d_max) = (&state.map, state.d_max);
        match self {
            Conditioner::Naive(l) => find(l, layer_id)?.params(map, d_max),
            Conditioner::Categorical(l) => find(l, layer_id)?.params(map, d_max),
            Conditioner::Hierarchical(l) => find(l, layer_id)?.params(map, d_max),
            Conditioner::Continuous(e) => e.head_params(state.encoded.as_ref().expect("prepared"), layer_id),
            Conditioner::None | Conditioner::FeatureConcat(_) => Err(Error::UnregisteredLayer(layer_id)),
        }
    }

    /// Accumulates parameter gradients of one conditioned layer. For the
    /// continuous variant the trunk gradient is summed into `trunk_grad`.
    pub fn params_backward(
        &mut self,
        state: &ConditionerState<T>,
        layer_id: usize,
        grad_gamma: &Tensor<T>,
        grad_beta: &Tensor<T>,
        trunk_grad: &mut Option<Tensor<T>>,
    ) -> Result<()> {
        let (map, d_max) = (&state.map, state.d_max);
        match self {
            Conditioner::Naive(l) => find_mut(l, layer_id)?.backward(map, d_max, grad_gamma, grad_beta),
            Conditioner::Categorical(l) => find_mut(l, layer_id)?.backward(map, d_max, grad_gamma, grad_beta),
            Conditioner::Hierarchical(l) => find_mut(l, layer_id)?.backward(map, d_max, grad_gamma, grad_beta),
            Conditioner::Continuous(e) => {
                let g = e.head_backward(state.encoded.as_ref().expect("prepared"), layer_id, grad_gamma, grad_beta)?;
                match trunk_grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
                    None => *trunk_grad = Some(g),
                }
                Ok(())
            }
            Conditioner::None | Conditioner::FeatureConcat(_) => Err(Error::UnregisteredLayer(layer_id)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Conditioner::Categorical(l) => l.iter().try_for_each(|(_, t)| t.validate()),
            Conditioner::Hierarchical(l) => l.iter().try_for_each(|(_, t)| t.validate()),
            _ => Ok(()),
        }
    }
}

impl<T: Scalar> Module<T> for Conditioner<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        match self {
            Conditioner::None => {}
            Conditioner::FeatureConcat(e) => e.visit(&join(prefix, "encoder"), f),
            Conditioner::Naive(l) => l.iter().for_each(|(i, m)| m.visit(&join(prefix, &format!("layer{i}")), f)),
            Conditioner::Categorical(l) => l.iter().for_each(|(i, m)| m.visit(&join(prefix, &format!("layer{i}")), f)),
            Conditioner::Hierarchical(l) => l.iter().for_each(|(i, m)| m.visit(&join(prefix, &format!("layer{i}")), f)),
            Conditioner::Continuous(e) => e.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        match self {
            Conditioner::None => {}
            Conditioner::FeatureConcat(e) => e.visit_mut(&join(prefix, "encoder"), f),
            Conditioner::Naive(l) => l.iter_mut().for_each(|(i, m)| m.visit_mut(&join(prefix, &format!("layer{i}")), f)),
            Conditioner::Categorical(l) => l.iter_mut().for_each(|(i, m)| m.visit_mut(&join(prefix, &format!("layer{i}")), f)),
            Conditioner::Hierarchical(l) => l.iter_mut().for_each(|(i, m)| m.visit_mut(&join(prefix, &format!("layer{i}")), f)),
            Conditioner::Continuous(e) => e.visit_mut(prefix, f),
        }
    }
}

#[derive(Debug, Clone)]
pub enum RegNorm<T> {
    Batch(BatchNorm<T>),
    /// Moments only; the affine fields come from the conditioner.
    Conditioned(NormStats<T>),
}

#[derive(Debug, Clone)]
struct RegBlock<T> {
    conv: Conv3d<T>,
    norm: RegNorm<T>,
}

/// `conv3d -> norm -> relu` blocks followed by a 3x3x3 conv to one channel.
#[derive(Debug, Clone)]
pub struct Regularizer<T> {
    blocks: Vec<RegBlock<T>>,
    output: Conv3d<T>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    input: Tensor<T>,
    norm: NormCache<T>,
    gamma: Option<Tensor<T>>,
    output: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct RegularizeCache<T> {
    state: ConditionerState<T>,
    blocks: Vec<BlockCache<T>>,
    last: Tensor<T>,
    volume_channels: usize,
}

impl<T: Scalar> Regularizer<T> {
    /// `conditioned` holds the 1-based ids of blocks whose norm takes its
    /// affine fields from the conditioner.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        channels: &[usize],
        conditioned: &[usize],
        norm: impl Fn(usize) -> NormStats<T>,
        rng: &mut R,
    ) -> Self {
        let mut cin = in_channels;
        let blocks = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv3d::new(cin, c, 3, 1, 1, false, rng);
                cin = c;
                let norm = if conditioned.contains(&(i + 1)) {
                    RegNorm::Conditioned(norm(c))
                } else {
                    RegNorm::Batch(BatchNorm::with_stats(norm(c), 3))
                };
                RegBlock { conv, norm }
            })
            .collect();
        Regularizer {
            blocks,
            output: Conv3d::new(cin, 1, 3, 1, 1, true, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.blocks[0].conv.in_channels()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn norm(&self, layer_id: usize) -> Option<&RegNorm<T>> {
        self.blocks.get(layer_id.checked_sub(1)?).map(|b| &b.norm)
    }

    /// `volume` is `[2C, h, w, D]`; `map` is the LiDAR map at feature
    /// resolution with disparities in volume-level units up to `d_max`.
    pub fn forward(
        &mut self,
        volume: &Tensor<T>,
        map: &SparseDisparityMap,
        d_max: f64,
        conditioner: &Conditioner<T>,
        training: bool,
    ) -> Result<(Tensor<T>, RegularizeCache<T>)> {
        volume.expect_rank("regularize", "volume", 4)?;
        let s = volume.shape();
        if (map.height(), map.width()) != (s[1], s[2]) {
            return Err(Error::shape("regularize", "LiDAR map extent", (s[1], s[2]), (map.height(), map.width())));
        }
        let state = conditioner.prepare(map, d_max)?;
        let mut x = volume.clone();
        if let (Conditioner::FeatureConcat(_), Some(enc)) = (conditioner, &state.encoded) {
            let extra = FeatureConcatEncoder::broadcast(&enc.features, s[3]);
            let mut data = x.into_data();
            data.extend_from_slice(extra.data());
            x = Tensor::from_vec(&[s[0] + extra.shape()[0], s[1], s[2], s[3]], data)?;
        }
        if x.shape()[0] != self.in_channels() {
            return Err(Error::shape("regularize", "volume channels", self.in_channels(), x.shape()[0]));
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let pre = block.conv.forward(&x)?;
            let (y, norm, gamma) = match &mut block.norm {
                RegNorm::Batch(bn) => {
                    let (y, nc) = bn.forward(&pre, training)?;
                    (y, nc, None)
                }
                RegNorm::Conditioned(stats) => {
                    let (g, b) = conditioner.params(&state, i + 1)?;
                    let (y, nc) = conditioned_forward(&pre, stats, &g, &b, training)?;
                    (y, nc, Some(g))
                }
            };
            let y = relu(&y);
            caches.push(BlockCache {
                input: std::mem::replace(&mut x, y.clone()),
                norm,
                gamma,
                output: y,
            });
        }
        let out = self.output.forward(&x)?;
        Ok((
            out,
            RegularizeCache {
                state,
                blocks: caches,
                last: x,
                volume_channels: s[0],
            },
        ))
    }

    /// Accumulates gradients of the regularizer and the conditioner; returns
    /// the gradient w.r.t. the cost volume.
    pub fn backward(&mut self, cache: &RegularizeCache<T>, conditioner: &mut Conditioner<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.output.backward(&cache.last, grad)?;
        let mut trunk_grad = None;
        for (i, (block, bc)) in self.blocks.iter_mut().zip(&cache.blocks).enumerate().rev() {
            let gy = relu_backward(&bc.output, &g);
            let gpre = match &mut block.norm {
                RegNorm::Batch(bn) => bn.backward(&bc.norm, &gy)?,
                RegNorm::Conditioned(_) => {
                    let gamma = bc.gamma.as_ref().expect("conditioned block keeps gamma");
                    let (gx, gg, gb) = conditioned_backward(&bc.norm, gamma, &gy)?;
                    conditioner.params_backward(&cache.state, i + 1, &gg, &gb, &mut trunk_grad)?;
                    gx
                }
            };
            g = block.conv.backward(&bc.input, &gpre)?;
        }
        if let (Conditioner::Continuous(e), Some(tg)) = (&mut *conditioner, &trunk_grad) {
            e.trunk_backward(cache.state.encoded.as_ref().expect("prepared"), tg)?;
        }
        if let (Conditioner::FeatureConcat(e), Some(enc)) = (&mut *conditioner, &cache.state.encoded) {
            let s = g.shape().to_vec();
            let split = cache.volume_channels * s[1] * s[2] * s[3];
            let extra = Tensor::from_vec(&[s[0] - cache.volume_channels, s[1], s[2], s[3]], g.data()[split..].to_vec())?;
            e.backward(enc, &extra)?;
            g = Tensor::from_vec(&[cache.volume_channels, s[1], s[2], s[3]], g.data()[..split].to_vec())?;
        }
        Ok(g)
    }
}

impl<T: Scalar> Module<T> for Regularizer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("block{}", i + 1));
            b.conv.visit(&join(&p, "conv"), f);
            match &b.norm {
                RegNorm::Batch(n) => n.visit(&join(&p, "norm"), f),
                RegNorm::Conditioned(s) => s.visit(&join(&p, "norm"), f),
            }
        }
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block{}", i + 1));
            b.conv.visit_mut(&join(&p, "conv"), f);
            match &mut b.norm {
                RegNorm::Batch(n) => n.visit_mut(&join(&p, "norm"), f),
                RegNorm::Conditioned(s) => s.visit_mut(&join(&p, "norm"), f),
            }
        }
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}
