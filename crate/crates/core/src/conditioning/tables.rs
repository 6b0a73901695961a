//! Lookup-table producers of per-pixel, per-disparity affine parameters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{discretize_disparity, SparseDisparityMap};
use crate::layers::{join, Module, ParamKind};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Table row for every pixel, `None` where the map is invalid.
pub fn lidar_bins(map: &SparseDisparityMap, d_hat: usize, d_max: f64) -> Result<Vec<Option<usize>>> {
    map.values()
        .iter()
        .zip(map.valid())
        .map(|(&v, &ok)| if ok { discretize_disparity(v, d_hat, d_max).map(Some) } else { Ok(None) })
        .collect()
}

fn check_finite<T: Scalar>(name: &str, t: &Tensor<T>) -> Result<()> {
    if t.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("conditioning table `{name}`")));
    }
    Ok(())
}

fn init_gamma<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, 1.0, 0.02, rng)
}

fn init_beta<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, 0.0, 0.02, rng)
}

/// Categorical CCVNorm parameters: a `D_hat`-entry table of `D x C` blocks
/// for valid pixels and a separate `D x C` block for invalid ones.
#[derive(Debug, Clone)]
pub struct CategoricalTable<T> {
    pub gamma_table: Tensor<T>,
    pub beta_table: Tensor<T>,
    pub gamma_invalid: Tensor<T>,
    pub beta_invalid: Tensor<T>,
}

impl<T: Scalar> CategoricalTable<T> {
    pub fn new<R: Rng + ?Sized>(d_hat: usize, levels: usize, channels: usize, rng: &mut R) -> Self {
        assert!(d_hat >= 2, "d_hat must be >= 2");
        CategoricalTable {
            gamma_table: init_gamma(&[d_hat, levels, channels], rng),
            beta_table: init_beta(&[d_hat, levels, channels], rng),
            gamma_invalid: Tensor::ones(&[levels, channels]),
            beta_invalid: Tensor::zeros(&[levels, channels]),
        }
    }

    pub fn d_hat(&self) -> usize {
        self.gamma_table.shape()[0]
    }

    pub fn levels(&self) -> usize {
        self.gamma_table.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.gamma_table.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let mut res = Ok(());
        self.visit("", &mut |n, t, _| {
            if res.is_ok() {
                res = check_finite(n, t);
            }
        });
        res
    }

    /// `(gamma, beta)` fields shaped `[H, W, D, C]`.
    pub fn params(&self, map: &SparseDisparityMap, d_max: f64) -> Result<(Tensor<T>, Tensor<T>)> {
        let bins = lidar_bins(map, self.d_hat(), d_max)?;
        let block = self.levels() * self.channels();
        let mut g = Vec::with_capacity(bins.len() * block);
        let mut b = Vec::with_capacity(bins.len() * block);
        for bin in bins {
            match bin {
                Some(k) => {
                    g.extend_from_slice(&self.gamma_table.data()[k * block..(k + 1) * block]);
                    b.extend_from_slice(&self.beta_table.data()[k * block..(k + 1) * block]);
                }
                None => {
                    g.extend_from_slice(self.gamma_invalid.data());
                    b.extend_from_slice(self.beta_invalid.data());
                }
            }
        }
        let shape = [map.height(), map.width(), self.levels(), self.channels()];
        Ok((Tensor::from_vec(&shape, g)?, Tensor::from_vec(&shape, b)?))
    }

    /// Scatters field gradients back onto the table rows they were read from.
    pub fn backward(&mut self, map: &SparseDisparityMap, d_max: f64, grad_gamma: &Tensor<T>, grad_beta: &Tensor<T>) -> Result<()> {
        let bins = lidar_bins(map, self.d_hat(), d_max)?;
        let block = self.levels() * self.channels();
        let shape = [map.height(), map.width(), self.levels(), self.channels()];
        grad_gamma.expect_shape("ccvnorm_categorical", "gamma gradient", &shape)?;
        grad_beta.expect_shape("ccvnorm_categorical", "beta gradient", &shape)?;
        let mut gt = vec![T::zero(); self.gamma_table.len()];
        let mut bt = vec![T::zero(); self.beta_table.len()];
        let mut gi = vec![T::zero(); block];
        let mut bi = vec![T::zero(); block];
        for (p, bin) in bins.iter().enumerate() {
            let src_g = &grad_gamma.data()[p * block..(p + 1) * block];
            let src_b = &grad_beta.data()[p * block..(p + 1) * block];
            let (dg, db) = match *bin {
                Some(k) => (&mut gt[k * block..(k + 1) * block], &mut bt[k * block..(k + 1) * block]),
                None => (&mut gi[..], &mut bi[..]),
            };
            for i in 0..block {
                dg[i] += src_g[i];
                db[i] += src_b[i];
            }
        }
        self.gamma_table.accumulate_grad(&gt);
        self.beta_table.accumulate_grad(&bt);
        self.gamma_invalid.accumulate_grad(&gi);
        self.beta_invalid.accumulate_grad(&bi);
        Ok(())
    }
}

impl<T: Scalar> Module<T> for CategoricalTable<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        f(&join(prefix, "gamma_table"), &self.gamma_table, ParamKind::Learnable);
        f(&join(prefix, "beta_table"), &self.beta_table, ParamKind::Learnable);
        f(&join(prefix, "gamma_invalid"), &self.gamma_invalid, ParamKind::Learnable);
        f(&join(prefix, "beta_invalid"), &self.beta_invalid, ParamKind::Learnable);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        f(&join(prefix, "gamma_table"), &mut self.gamma_table, ParamKind::Learnable);
        f(&join(prefix, "beta_table"), &mut self.beta_table, ParamKind::Learnable);
        f(&join(prefix, "gamma_invalid"), &mut self.gamma_invalid, ParamKind::Learnable);
        f(&join(prefix, "beta_invalid"), &mut self.beta_invalid, ParamKind::Learnable);
    }
}

pub fn ccvnorm_categorical_params<T: Scalar>(
    map: &SparseDisparityMap,
    table: &CategoricalTable<T>,
    d_hat: usize,
    d_max: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if d_hat != table.d_hat() {
        return Err(Error::shape("ccvnorm_categorical", "d_hat", table.d_hat(), d_hat));
    }
    table.params(map, d_max)
}

/// Hierarchical CCVNorm: a `D_hat x C` table per affine parameter, then a
/// per-disparity `D x C` scale/offset pair:
/// `gamma[h,w,d,c] = phi_g[d,c] * g_table[k,c] + psi_g[d,c]`.
#[derive(Debug, Clone)]
pub struct HierTable<T> {
    pub g_table: Tensor<T>,
    pub h_table: Tensor<T>,
    pub phi_g: Tensor<T>,
    pub psi_g: Tensor<T>,
    pub phi_h: Tensor<T>,
    pub psi_h: Tensor<T>,
    pub gamma_invalid: Tensor<T>,
    pub beta_invalid: Tensor<T>,
}

impl<T: Scalar> HierTable<T> {
    pub fn new<R: Rng + ?Sized>(d_hat: usize, levels: usize, channels: usize, rng: &mut R) -> Self {
        assert!(d_hat >= 2, "d_hat must be >= 2");
        HierTable {
            g_table: init_gamma(&[d_hat, channels], rng),
            h_table: init_beta(&[d_hat, channels], rng),
            phi_g: init_gamma(&[levels, channels], rng),
            psi_g: init_beta(&[levels, channels], rng),
            phi_h: init_gamma(&[levels, channels], rng),
            psi_h: init_beta(&[levels, channels], rng),
            gamma_invalid: Tensor::ones(&[levels, channels]),
            beta_invalid: Tensor::zeros(&[levels, channels]),
        }
    }

    pub fn d_hat(&self) -> usize {
        self.g_table.shape()[0]
    }

    pub fn levels(&self) -> usize {
        self.phi_g.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.g_table.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let mut res = Ok(());
        self.visit("", &mut |n, t, _| {
            if res.is_ok() {
                res = check_finite(n, t);
            }
        });
        res
    }

    pub fn params(&self, map: &SparseDisparityMap, d_max: f64) -> Result<(Tensor<T>, Tensor<T>)> {
        let bins = lidar_bins(map, self.d_hat(), d_max)?;
        let (levels, c) = (self.levels(), self.channels());
        let block = levels * c;
        let mut g = Vec::with_capacity(bins.len() * block);
        let mut b = Vec::with_capacity(bins.len() * block);
        let (pg, sg, ph, sh) = (self.phi_g.data(), self.psi_g.data(), self.phi_h.data(), self.psi_h.data());
        for bin in bins {
            match bin {
                Some(k) => {
                    let gk = &self.g_table.data()[k * c..(k + 1) * c];
                    let hk = &self.h_table.data()[k * c..(k + 1) * c];
                    for d in 0..levels {
                        for ch in 0..c {
                            let j = d * c + ch;
                            g.push(pg[j] * gk[ch] + sg[j]);
                            b.push(ph[j] * hk[ch] + sh[j]);
                        }
                    }
                }
                None => {
                    g.extend_from_slice(self.gamma_invalid.data());
                    b.extend_from_slice(self.beta_invalid.data());
                }
            }
        }
        let shape = [map.height(), map.width(), levels, c];
        Ok((Tensor::from_vec(&shape, g)?, Tensor::from_vec(&shape, b)?))
    }

    pub fn backward(&mut self, map: &SparseDisparityMap, d_max: f64, grad_gamma: &Tensor<T>, grad_beta: &Tensor<T>) -> Result<()> {
        let bins = lidar_bins(map, self.d_hat(), d_max)?;
        let (levels, c) = (self.levels(), self.channels());
        let block = levels * c;
        let shape = [map.height(), map.width(), levels, c];
        grad_gamma.expect_shape("hierccvnorm", "gamma gradient", &shape)?;
        grad_beta.expect_shape("hierccvnorm", "beta gradient", &shape)?;
        let zeros = |n: usize| vec![T::zero(); n];
        let (mut g_g, mut g_h) = (zeros(self.g_table.len()), zeros(self.h_table.len()));
        let (mut g_pg, mut g_sg, mut g_ph, mut g_sh) = (zeros(block), zeros(block), zeros(block), zeros(block));
        let (mut g_gi, mut g_bi) = (zeros(block), zeros(block));
        let (pg, ph) = (self.phi_g.data(), self.phi_h.data());
        for (p, bin) in bins.iter().enumerate() {
            let gg = &grad_gamma.data()[p * block..(p + 1) * block];
            let gb = &grad_beta.data()[p * block..(p + 1) * block];
            match *bin {
                Some(k) => {
                    let gk = &self.g_table.data()[k * c..(k + 1) * c];
                    let hk = &self.h_table.data()[k * c..(k + 1) * c];
                    for d in 0..levels {
                        for ch in 0..c {
                            let j = d * c + ch;
                            g_pg[j] += gg[j] * gk[ch];
                            g_sg[j] += gg[j];
                            g_g[k * c + ch] += gg[j] * pg[j];
                            g_ph[j] += gb[j] * hk[ch];
                            g_sh[j] += gb[j];
                            g_h[k * c + ch] += gb[j] * ph[j];
                        }
                    }
                }
                None => {
                    for j in 0..block {
                        g_gi[j] += gg[j];
                        g_bi[j] += gb[j];
                    }
                }
            }
        }
        self.g_table.accumulate_grad(&g_g);
        self.h_table.accumulate_grad(&g_h);
        self.phi_g.accumulate_grad(&g_pg);
        self.psi_g.accumulate_grad(&g_sg);
        self.phi_h.accumulate_grad(&g_ph);
        self.psi_h.accumulate_grad(&g_sh);
        self.gamma_invalid.accumulate_grad(&g_gi);
        self.beta_invalid.accumulate_grad(&g_bi);
        Ok(())
    }
}

impl<T: Scalar> Module<T> for HierTable<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, ParamKind)) {
        for (n, t) in [
            ("g_table", &self.g_table),
            ("h_table", &self.h_table),
            ("phi_g", &self.phi_g),
            ("psi_g", &self.psi_g),
            ("phi_h", &self.phi_h),
            ("psi_h", &self.psi_h),
            ("gamma_invalid", &self.gamma_invalid),
            ("beta_invalid", &self.beta_invalid),
        ] {
            f(&join(prefix, n), t, ParamKind::Learnable);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, ParamKind)) {
        for (n, t) in [
            ("g_table", &mut self.g_table),
            ("h_table", &mut self.h_table),
            ("phi_g", &mut self.phi_g),
            ("psi_g", &mut self.psi_g),
            ("phi_h", &mut self.phi_h),
            ("psi_h", &mut self.psi_h),
            ("gamma_invalid", &mut self.gamma_invalid),
            ("beta_invalid", &mut self.beta_invalid),
        ] {
            f(&join(prefix, n), t, ParamKind::Learnable);
        }
    }
}

pub fn hierccvnorm_params<T: Scalar>(
    map: &SparseDisparityMap,
    hier: &HierTable<T>,
    d_hat: usize,
    d_max: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if d_hat != hier.d_hat() {
        return Err(Error::shape("hierccvnorm", "d_hat", hier.d_hat(), d_hat));
    }
    hier.params(map, d_max)
}
