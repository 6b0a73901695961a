use crate::error::{Error, Result};
use crate::layers::{join, Module, ParamKind};
use crate::numerics::Tensor;
use crate::scalar::{cst, Scalar};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Batch moments plus running estimates for one normalization layer.
#[derive(Debug, Clone)]
pub struct NormStats<T> {
    /// Moments used by the most recent normalization.
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub epsilon: T,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
}

/// Saved state for the backward pass of a normalization.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    training: bool,
    batch: usize,
    inner: usize,
}

impl<T> NormCache<T> {
    pub fn xhat(&self) -> &Tensor<T> {
        &self.xhat
    }
}

/// `(batch, channels, inner)` for `[C, ...]` or `[N, C, ...]` tensors with
/// `spatial` trailing axes.
fn layout(shape: &[usize], spatial: usize) -> Result<(usize, usize, usize)> {
    let inner = |s: &[usize]| s.iter().product::<usize>();
    if shape.len() == spatial + 1 {
        Ok((1, shape[0], inner(&shape[1..])))
    } else if shape.len() == spatial + 2 {
        Ok((shape[0], shape[1], inner(&shape[2..])))
    } else {
        Err(Error::shape("normalize", "rank", format!("{} or {}", spatial + 1, spatial + 2), shape.len()))
    }
}

impl<T: Scalar> NormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_params(channels, cst(DEFAULT_EPSILON), cst(DEFAULT_MOMENTUM))
    }

    pub fn with_params(channels: usize, epsilon: T, momentum: T) -> Self {
        assert!(epsilon > T::zero(), "epsilon must be positive");
        NormStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            epsilon,
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Computes `(x - mean_c) / sqrt(var_c + eps)`.
    ///
    /// Training mode takes per-channel population moments over every other
    /// axis and folds them into the running estimates; inference mode uses
    /// the running estimates.
    pub fn normalize(&mut self, x: &Tensor<T>, spatial: usize, training: bool) -> Result<NormCache<T>> {
        let (batch, c, inner) = layout(x.shape(), spatial)?;
        if c != self.channels() {
            return Err(Error::shape("normalize", "channels", self.channels(), c));
        }
        let data = x.data();
        let chan = |b: usize, ch: usize| &data[(b * c + ch) * inner..(b * c + ch + 1) * inner];
        if training {
            let count = T::from_usize(batch * inner).unwrap();
            for ch in 0..c {
                // shifted two-pass moments, see `batch_stats`
                let k = chan(0, ch)[0];
                let mut s = T::zero();
                for b in 0..batch {
                    for &v in chan(b, ch) {
                        s += v - k;
                    }
                }
                let m = s / count;
                let mut q = T::zero();
                for b in 0..batch {
                    for &v in chan(b, ch) {
                        let d = v - k - m;
                        q += d * d;
                    }
                }
                self.mean[ch] = k + m;
                self.var[ch] = q / count;
            }
            let (keep, mom) = (T::one() - self.momentum, self.momentum);
            for ch in 0..c {
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = keep * *rm + mom * self.mean[ch];
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = keep * *rv + mom * self.var[ch];
            }
        } else {
            self.mean.copy_from_slice(self.running_mean.data());
            self.var.copy_from_slice(self.running_var.data());
        }
        let inv_std: Vec<T> = self.var.iter().map(|&v| T::one() / (v + self.epsilon).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                let (m, s) = (self.mean[ch], inv_std[ch]);
                for (o, &v) in xhat[off..off + inner].iter_mut().zip(chan(b, ch)) {
                    *o = (v - m) * s;
                }
            }
        }
        Ok(NormCache {
            xhat: Tensor::from_vec(x.shape(), xhat)?,
            inv_std,
            training,
            batch,
            inner,
        })
    }
}

impl<T: Scalar> Module<T> for NormStats<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        f(&join(prefix, "running_mean"), &self.running_mean, ParamKind::Buffer);
        f(&join(prefix, "running_var"), &self.running_var, ParamKind::Buffer);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        f(&join(prefix, "running_mean"), &mut self.running_mean, ParamKind::Buffer);
        f(&join(prefix, "running_var"), &mut self.running_var, ParamKind::Buffer);
    }
}

/// Gradient through the normalization given the gradient w.r.t. `xhat`.
pub fn normalize_backward<T: Scalar>(cache: &NormCache<T>, grad_xhat: &[T]) -> Result<Tensor<T>> {
    let (batch, inner) = (cache.batch, cache.inner);
    let c = cache.inv_std.len();
    let xhat = cache.xhat.data();
    let mut gx = vec![T::zero(); xhat.len()];
    let count = T::from_usize(batch * inner).unwrap();
    for ch in 0..c {
        let s = cache.inv_std[ch];
        let (mut mg, mut mgx) = (T::zero(), T::zero());
        if cache.training {
            for b in 0..batch {
                let off = (b * c + ch) * inner;
                for i in off..off + inner {
                    mg += grad_xhat[i];
                    mgx += grad_xhat[i] * xhat[i];
                }
            }
            mg /= count;
            mgx /= count;
        }
        for b in 0..batch {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                gx[i] = if cache.training {
                    s * (grad_xhat[i] - mg - xhat[i] * mgx)
                } else {
                    s * grad_xhat[i]
                };
            }
        }
    }
    Tensor::from_vec(cache.xhat.shape(), gx)
}

/// Plain 3-D batch normalization of `[C,H,W,D]` or `[N,C,H,W,D]`.
pub fn bn3d<T: Scalar>(f: &Tensor<T>, stats: &mut NormStats<T>, gamma: &[T], beta: &[T], training: bool) -> Result<Tensor<T>> {
    let cache = stats.normalize(f, 3, training)?;
    channel_affine(&cache, gamma, beta)
}

fn channel_affine<T: Scalar>(cache: &NormCache<T>, gamma: &[T], beta: &[T]) -> Result<Tensor<T>> {
    let c = cache.inv_std.len();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape("batch_norm", "affine parameters", c, (gamma.len(), beta.len())));
    }
    let inner = cache.inner;
    let mut y = cache.xhat.clone();
    for (i, chunk) in y.data_mut().chunks_mut(inner).enumerate() {
        let ch = i % c;
        for v in chunk {
            *v = gamma[ch] * *v + beta[ch];
        }
    }
    Ok(y)
}

fn check_field<T: Scalar>(f: &Tensor<T>, field: &Tensor<T>, what: &str) -> Result<()> {
    f.expect_rank("apply_conditioned_norm", "features", 4)?;
    let s = f.shape();
    field.expect_shape("apply_conditioned_norm", what, &[s[1], s[2], s[3], s[0]])
}

/// `F'[c,h,w,d] = gamma[h,w,d,c] * (F[c,h,w,d] - mean_c) / sqrt(var_c + eps) + beta[h,w,d,c]`.
///
/// The moments are the unconditional batch moments (or running estimates
/// outside training); only the affine part is per-position.
pub fn apply_conditioned_norm<T: Scalar>(
    f: &Tensor<T>,
    stats: &mut NormStats<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    training: bool,
) -> Result<Tensor<T>> {
    Ok(conditioned_forward(f, stats, gamma, beta, training)?.0)
}

pub fn conditioned_forward<T: Scalar>(
    f: &Tensor<T>,
    stats: &mut NormStats<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    training: bool,
) -> Result<(Tensor<T>, NormCache<T>)> {
    check_field(f, gamma, "gamma field")?;
    check_field(f, beta, "beta field")?;
    let cache = stats.normalize(f, 3, training)?;
    let c = f.shape()[0];
    let inner = cache.inner;
    let (g, b) = (gamma.data(), beta.data());
    let mut y = cache.xhat.clone();
    for (ch, chunk) in y.data_mut().chunks_mut(inner).enumerate() {
        for (p, v) in chunk.iter_mut().enumerate() {
            *v = g[p * c + ch] * *v + b[p * c + ch];
        }
    }
    Ok((y, cache))
}

/// Returns `(grad_F, grad_gamma, grad_beta)`.
pub fn conditioned_backward<T: Scalar>(
    cache: &NormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    grad_out.expect_shape("apply_conditioned_norm", "output gradient", cache.xhat.shape())?;
    let c = cache.inv_std.len();
    let inner = cache.inner;
    let (xhat, gy, g) = (cache.xhat.data(), grad_out.data(), gamma.data());
    let mut gxhat = vec![T::zero(); xhat.len()];
    let mut ggamma = vec![T::zero(); g.len()];
    let mut gbeta = vec![T::zero(); g.len()];
    for ch in 0..c {
        for p in 0..inner {
            let i = ch * inner + p;
            let j = p * c + ch;
            gxhat[i] = gy[i] * g[j];
            ggamma[j] = gy[i] * xhat[i];
            gbeta[j] = gy[i];
        }
    }
    Ok((
        normalize_backward(cache, &gxhat)?,
        Tensor::from_vec(gamma.shape(), ggamma)?,
        Tensor::from_vec(gamma.shape(), gbeta)?,
    ))
}

/// Batch normalization with per-channel learnable affine parameters.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: NormStats<T>,
    spatial: usize,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize, spatial: usize) -> Self {
        BatchNorm {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            stats: NormStats::new(channels),
            spatial,
        }
    }

    pub fn with_stats(stats: NormStats<T>, spatial: usize) -> Self {
        let c = stats.channels();
        BatchNorm {
            gamma: Tensor::ones(&[c]),
            beta: Tensor::zeros(&[c]),
            stats,
            spatial,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<(Tensor<T>, NormCache<T>)> {
        let cache = self.stats.normalize(x, self.spatial, training)?;
        let y = channel_affine(&cache, self.gamma.data(), self.beta.data())?;
        Ok((y, cache))
    }

    pub fn backward(&mut self, cache: &NormCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let c = cache.inv_std.len();
        let inner = cache.inner;
        let (xhat, gy) = (cache.xhat.data(), grad_out.data());
        let mut gxhat = vec![T::zero(); xhat.len()];
        let mut gg = vec![T::zero(); c];
        let mut gb = vec![T::zero(); c];
        let gamma = self.gamma.data();
        for (blk, (gchunk, xchunk)) in gy.chunks(inner).zip(xhat.chunks(inner)).enumerate() {
            let ch = blk % c;
            for (k, (&g, &xh)) in gchunk.iter().zip(xchunk).enumerate() {
                gxhat[blk * inner + k] = g * gamma[ch];
                gg[ch] += g * xh;
                gb[ch] += g;
            }
        }
        self.gamma.accumulate_grad(&gg);
        self.beta.accumulate_grad(&gb);
        normalize_backward(cache, &gxhat)
    }
}

impl<T: Scalar> Module<T> for BatchNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        f(&join(prefix, "gamma"), &self.gamma, ParamKind::Learnable);
        f(&join(prefix, "beta"), &self.beta, ParamKind::Learnable);
        self.stats.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        f(&join(prefix, "gamma"), &mut self.gamma, ParamKind::Learnable);
        f(&join(prefix, "beta"), &mut self.beta, ParamKind::Learnable);
        self.stats.visit_mut(prefix, f);
    }
}
