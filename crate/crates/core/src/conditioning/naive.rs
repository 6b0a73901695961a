use rand::Rng;

use crate::error::Result;
use crate::geometry::SparseDisparityMap;
use crate::layers::{join, Module, ParamKind};
use crate::numerics::Tensor;
use crate::scalar::{cst, Scalar};

/// Naive conditional BN: a two-layer `tanh` MLP maps each valid pixel's
/// disparity (scaled by `1/d_max`) to `2C` values, the same for every
/// disparity level. Invalid pixels use the unconditional `gamma`, `beta`.
#[derive(Debug, Clone)]
pub struct NaiveCbn<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    pub gamma_uncond: Tensor<T>,
    pub beta_uncond: Tensor<T>,
    levels: usize,
}

impl<T: Scalar> NaiveCbn<T> {
    pub fn new<R: Rng + ?Sized>(hidden: usize, levels: usize, channels: usize, rng: &mut R) -> Self {
        let mut b2 = Tensor::zeros(&[2 * channels]);
        b2.data_mut()[..channels].iter_mut().for_each(|v| *v = T::one());
        NaiveCbn {
            w1: Tensor::randn(&[hidden, 1], 0.0, 2.0, rng),
            b1: Tensor::uniform(&[hidden], -1.0, 1.0, rng),
            w2: Tensor::randn(&[2 * channels, hidden], 0.0, 0.02, rng),
            b2,
            gamma_uncond: Tensor::ones(&[channels]),
            beta_uncond: Tensor::zeros(&[channels]),
            levels,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma_uncond.len()
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    fn hidden_act(&self, s: T) -> Vec<T> {
        self.w1
            .data()
            .iter()
            .zip(self.b1.data())
            .map(|(&w, &b)| (w * s + b).tanh())
            .collect()
    }

    fn mlp(&self, s: T) -> (Vec<T>, Vec<T>) {
        let h = self.hidden_act(s);
        let hd = self.hidden();
        let out = self
            .w2
            .data()
            .chunks(hd)
            .zip(self.b2.data())
            .map(|(row, &b)| row.iter().zip(&h).map(|(&w, &x)| w * x).sum::<T>() + b)
            .collect();
        (h, out)
    }

    /// `(gamma, beta)` per pixel, shaped `[H, W, C]`.
    pub fn pixel_params(&self, map: &SparseDisparityMap, d_max: f64) -> Result<(Tensor<T>, Tensor<T>)> {
        let c = self.channels();
        let mut g = Vec::with_capacity(map.values().len() * c);
        let mut b = Vec::with_capacity(map.values().len() * c);
        for (&v, &ok) in map.values().iter().zip(map.valid()) {
            if ok {
                let (_, out) = self.mlp(cst::<T>(v / d_max));
                g.extend_from_slice(&out[..c]);
                b.extend_from_slice(&out[c..]);
            } else {
                g.extend_from_slice(self.gamma_uncond.data());
                b.extend_from_slice(self.beta_uncond.data());
            }
        }
        let shape = [map.height(), map.width(), c];
        Ok((Tensor::from_vec(&shape, g)?, Tensor::from_vec(&shape, b)?))
    }

    /// Pixel parameters broadcast along the disparity axis: `[H, W, D, C]`.
    pub fn params(&self, map: &SparseDisparityMap, d_max: f64) -> Result<(Tensor<T>, Tensor<T>)> {
        let (g, b) = self.pixel_params(map, d_max)?;
        let c = self.channels();
        let shape = [map.height(), map.width(), self.levels, c];
        let bcast = |t: &Tensor<T>| {
            let mut out = Vec::with_capacity(t.len() * self.levels);
            for px in t.data().chunks(c) {
                for _ in 0..self.levels {
                    out.extend_from_slice(px);
                }
            }
            Tensor::from_vec(&shape, out)
        };
        Ok((bcast(&g)?, bcast(&b)?))
    }

    pub fn backward(&mut self, map: &SparseDisparityMap, d_max: f64, grad_gamma: &Tensor<T>, grad_beta: &Tensor<T>) -> Result<()> {
        let (c, hd, levels) = (self.channels(), self.hidden(), self.levels);
        let shape = [map.height(), map.width(), levels, c];
        grad_gamma.expect_shape("naive_cbn", "gamma gradient", &shape)?;
        grad_beta.expect_shape("naive_cbn", "beta gradient", &shape)?;
        let zeros = |n: usize| vec![T::zero(); n];
        let (mut gw1, mut gb1, mut gw2, mut gb2) = (zeros(hd), zeros(hd), zeros(2 * c * hd), zeros(2 * c));
        let (mut gg, mut gbeta) = (zeros(c), zeros(c));
        let block = levels * c;
        for (p, (&v, &ok)) in map.values().iter().zip(map.valid()).enumerate() {
            // sum the field gradient over disparity levels
            let mut go = zeros(2 * c);
            for d in 0..levels {
                for ch in 0..c {
                    go[ch] += grad_gamma.data()[p * block + d * c + ch];
                    go[c + ch] += grad_beta.data()[p * block + d * c + ch];
                }
            }
            if !ok {
                for ch in 0..c {
                    gg[ch] += go[ch];
                    gbeta[ch] += go[c + ch];
                }
                continue;
            }
            let s = cst::<T>(v / d_max);
            let h = self.hidden_act(s);
            let mut gh = zeros(hd);
            for (o, &g) in go.iter().enumerate() {
                gb2[o] += g;
                for j in 0..hd {
                    gw2[o * hd + j] += g * h[j];
                    gh[j] += g * self.w2.data()[o * hd + j];
                }
            }
            for j in 0..hd {
                let gpre = gh[j] * (T::one() - h[j] * h[j]);
                gw1[j] += gpre * s;
                gb1[j] += gpre;
            }
        }
        self.w1.accumulate_grad(&gw1);
        self.b1.accumulate_grad(&gb1);
        self.w2.accumulate_grad(&gw2);
        self.b2.accumulate_grad(&gb2);
        self.gamma_uncond.accumulate_grad(&gg);
        self.beta_uncond.accumulate_grad(&gbeta);
        Ok(())
    }
}

impl<T: Scalar> Module<T> for NaiveCbn<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        for (n, t) in [
            ("mlp1.weight", &self.w1),
            ("mlp1.bias", &self.b1),
            ("mlp2.weight", &self.w2),
            ("mlp2.bias", &self.b2),
            ("gamma_uncond", &self.gamma_uncond),
            ("beta_uncond", &self.beta_uncond),
        ] {
            f(&join(prefix, n), t, ParamKind::Learnable);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        for (n, t) in [
            ("mlp1.weight", &mut self.w1),
            ("mlp1.bias", &mut self.b1),
            ("mlp2.weight", &mut self.w2),
            ("mlp2.bias", &mut self.b2),
            ("gamma_uncond", &mut self.gamma_uncond),
            ("beta_uncond", &mut self.beta_uncond),
        ] {
            f(&join(prefix, n), t, ParamKind::Learnable);
        }
    }
}

/// Per-pixel `[H, W, C]` parameters of [`NaiveCbn`].
pub fn naive_cbn_params<T: Scalar>(map: &SparseDisparityMap, mlp: &NaiveCbn<T>, d_max: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    mlp.pixel_params(map, d_max)
}
