//! Concatenation cost volume and soft-argmin disparity regression.

use crate::error::{Error, Result};
use crate::numerics::{softmax_neg, softmax_neg_backward, Tensor};
use crate::scalar::Scalar;

/// `[2C, H, W, D]` block: left features in channels `0..C`, right features
/// shifted by each candidate disparity in channels `C..2C`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume<T> {
    data: Tensor<T>,
}

impl<T: Scalar> CostVolume<T> {
    pub fn from_tensor(data: Tensor<T>) -> Result<Self> {
        data.expect_rank("cost_volume", "volume", 4)?;
        if data.shape()[3] < 2 {
            return Err(Error::invalid("cost_volume", "need at least 2 disparity levels"));
        }
        Ok(CostVolume { data })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn disparity_levels(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }
}

fn check_features<T: Scalar>(left: &Tensor<T>, right: &Tensor<T>, levels: usize) -> Result<(usize, usize, usize)> {
    left.expect_rank("build_cost_volume", "left features", 3)?;
    right.expect_shape("build_cost_volume", "right features", left.shape())?;
    let (c, h, w) = (left.shape()[0], left.shape()[1], left.shape()[2]);
    if levels < 2 {
        return Err(Error::invalid("build_cost_volume", "need at least 2 disparity levels"));
    }
    if levels > w {
        return Err(Error::invalid(
            "build_cost_volume",
            format!("degenerate search range: {levels} disparity levels exceed feature width {w}"),
        ));
    }
    Ok((c, h, w))
}

pub fn build_cost_volume<T: Scalar>(left: &Tensor<T>, right: &Tensor<T>, levels: usize) -> Result<CostVolume<T>> {
    let (c, h, w) = check_features(left, right, levels)?;
    let mut out = vec![T::zero(); 2 * c * h * w * levels];
    let plane = h * w * levels;
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * h + y) * w;
            for x in 0..w {
                let base = (y * w + x) * levels;
                let lv = left.data()[row + x];
                for d in 0..levels {
                    out[ch * plane + base + d] = lv;
                    if x >= d {
                        out[(c + ch) * plane + base + d] = right.data()[row + x - d];
                    }
                }
            }
        }
    }
    CostVolume::from_tensor(Tensor::from_vec(&[2 * c, h, w, levels], out)?)
}

/// Gradients of [`build_cost_volume`] for the left and right features.
pub fn build_cost_volume_backward<T: Scalar>(
    left: &Tensor<T>,
    right: &Tensor<T>,
    levels: usize,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, w) = check_features(left, right, levels)?;
    grad.expect_shape("build_cost_volume", "volume gradient", &[2 * c, h, w, levels])?;
    let g = grad.data();
    let plane = h * w * levels;
    let mut gl = vec![T::zero(); c * h * w];
    let mut gr = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * h + y) * w;
            for x in 0..w {
                let base = (y * w + x) * levels;
                for d in 0..levels {
                    gl[row + x] += g[ch * plane + base + d];
                    if x >= d {
                        gr[row + x - d] += g[(c + ch) * plane + base + d];
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(left.shape(), gl)?, Tensor::from_vec(left.shape(), gr)?))
}

fn check_reg_volume<T: Scalar>(v: &Tensor<T>) -> Result<(usize, usize, usize)> {
    v.expect_rank("soft_argmin", "volume", 4)?;
    if v.shape()[0] != 1 {
        return Err(Error::shape("soft_argmin", "channels", 1, v.shape()[0]));
    }
    Ok((v.shape()[1], v.shape()[2], v.shape()[3]))
}

/// `d*(h,w) = d_scale * sum_d d * softmax(-cost(h,w,.))_d`.
pub fn soft_argmin<T: Scalar>(volume: &Tensor<T>, d_scale: T) -> Result<Tensor<T>> {
    let (h, w, levels) = check_reg_volume(volume)?;
    let out = volume
        .data()
        .chunks_exact(levels)
        .map(|cost| {
            let p = softmax_neg(cost);
            let e: T = p.iter().enumerate().map(|(d, &p)| T::from_usize(d).unwrap() * p).sum();
            d_scale * e
        })
        .collect();
    Tensor::from_vec(&[h, w], out)
}

pub fn soft_argmin_backward<T: Scalar>(volume: &Tensor<T>, d_scale: T, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, levels) = check_reg_volume(volume)?;
    grad.expect_shape("soft_argmin", "disparity gradient", &[h, w])?;
    let idx: Vec<T> = (0..levels).map(|d| T::from_usize(d).unwrap()).collect();
    let mut out = Vec::with_capacity(volume.len());
    for (cost, &g) in volume.data().chunks_exact(levels).zip(grad.data()) {
        let p = softmax_neg(cost);
        let up: Vec<T> = idx.iter().map(|&d| g * d_scale * d).collect();
        out.extend(softmax_neg_backward(&p, &up));
    }
    Tensor::from_vec(volume.shape(), out)
}
