//! Parameter-holding wrappers around the numeric primitives.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{conv2d, conv2d_backward, conv3d, conv3d_backward, relu, relu_backward, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Learnable,
    /// Persisted but not trained (running statistics).
    Buffer,
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything owning named tensors.
pub trait Module<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind));

    fn n_learnable(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t, k| {
            if k == ParamKind::Learnable {
                n += t.len();
            }
        });
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, t, _| t.zero_grad());
    }
}

fn he_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, 0.0, (2.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool, rng: &mut R) -> Self {
        Conv2d {
            weight: he_normal(&[cout, cin, k, k], cin * k * k, rng),
            bias: bias.then(|| Tensor::zeros(&[cout])),
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.bias {
            Some(b) => conv2d(x, &self.weight, b, self.stride, self.pad),
            None => conv2d(x, &self.weight, &Tensor::zeros(&[self.out_channels()]), self.stride, self.pad),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = conv2d_backward(x, &self.weight, self.stride, self.pad, grad_out)?;
        self.weight.accumulate_grad(g.weight.data());
        if let Some(b) = self.bias.as_mut() {
            b.accumulate_grad(g.bias.data());
        }
        Ok(g.input)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        f(&join(prefix, "weight"), &self.weight, ParamKind::Learnable);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b, ParamKind::Learnable);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        f(&join(prefix, "weight"), &mut self.weight, ParamKind::Learnable);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b, ParamKind::Learnable);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv3d<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv3d<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool, rng: &mut R) -> Self {
        Conv3d {
            weight: he_normal(&[cout, cin, k, k, k], cin * k * k * k, rng),
            bias: bias.then(|| Tensor::zeros(&[cout])),
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.bias {
            Some(b) => conv3d(x, &self.weight, b, self.stride, self.pad),
            None => conv3d(x, &self.weight, &Tensor::zeros(&[self.out_channels()]), self.stride, self.pad),
        }
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = conv3d_backward(x, &self.weight, self.stride, self.pad, grad_out)?;
        self.weight.accumulate_grad(g.weight.data());
        if let Some(b) = self.bias.as_mut() {
            b.accumulate_grad(g.bias.data());
        }
        Ok(g.input)
    }
}

impl<T: Scalar> Module<T> for Conv3d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        f(&join(prefix, "weight"), &self.weight, ParamKind::Learnable);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b, ParamKind::Learnable);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        f(&join(prefix, "weight"), &mut self.weight, ParamKind::Learnable);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b, ParamKind::Learnable);
        }
    }
}

/// Residual 2-D block family used to encode sparse LiDAR maps:
/// `stem = relu(conv3x3(x))`, `out = relu(conv3x3(relu(conv3x3(stem))) + stem)`.
#[derive(Debug, Clone)]
pub struct ResidualEncoder<T> {
    pub stem: Conv2d<T>,
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

#[derive(Debug, Clone)]
pub struct ResidualCache<T> {
    input: Tensor<T>,
    stem: Tensor<T>,
    mid: Tensor<T>,
}

impl<T: Scalar> ResidualEncoder<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, channels: usize, rng: &mut R) -> Self {
        ResidualEncoder {
            stem: Conv2d::new(cin, channels, 3, 1, 1, true, rng),
            conv1: Conv2d::new(channels, channels, 3, 1, 1, true, rng),
            conv2: Conv2d::new(channels, channels, 3, 1, 1, true, rng),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.stem.out_channels()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ResidualCache<T>)> {
        let stem = relu(&self.stem.forward(x)?);
        let mid = relu(&self.conv1.forward(&stem)?);
        let mut out = self.conv2.forward(&mid)?;
        for (o, &s) in out.data_mut().iter_mut().zip(stem.data()) {
            *o = (*o + s).max(T::zero());
        }
        Ok((
            out,
            ResidualCache {
                input: x.clone(),
                stem,
                mid,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ResidualCache<T>, out: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g_sum = relu_backward(out, grad_out);
        let g_mid = relu_backward(&cache.mid, &self.conv2.backward(&cache.mid, &g_sum)?);
        let mut g_stem = self.conv1.backward(&cache.stem, &g_mid)?;
        for (a, &b) in g_stem.data_mut().iter_mut().zip(g_sum.data()) {
            *a += b;
        }
        let g_stem = relu_backward(&cache.stem, &g_stem);
        self.stem.backward(&cache.input, &g_stem)
    }
}

impl<T: Scalar> Module<T> for ResidualEncoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.conv1.visit(&join(prefix, "res1"), f);
        self.conv2.visit(&join(prefix, "res2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        self.conv1.visit_mut(&join(prefix, "res1"), f);
        self.conv2.visit_mut(&join(prefix, "res2"), f);
    }
}
