//! Trilinear resampling of a single-channel `[1, H, W, D]` volume.

use crate::error::Result;
use crate::numerics::Tensor;
use crate::scalar::{cst, Scalar};

/// Source taps `(i0, i1, t)` for each destination index: `(1 - t) * x[i0] + t * x[i1]`.
#[derive(Debug, Clone, PartialEq)]
struct Taps(Vec<(usize, usize, f64)>);

impl Taps {
    fn from_src(n_in: usize, src: impl Iterator<Item = f64>) -> Self {
        let hi = (n_in - 1) as f64;
        Taps(
            src.map(|s| {
                let s = s.clamp(0.0, hi);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect(),
        )
    }

    /// Pixel-center alignment: `src = (dst + 0.5) * n_in / n_out - 0.5`.
    fn centers(n_in: usize, n_out: usize) -> Self {
        let r = n_in as f64 / n_out as f64;
        Self::from_src(n_in, (0..n_out).map(|o| (o as f64 + 0.5) * r - 0.5))
    }

    /// Index alignment: `src = dst * n_in / n_out`, so level `k` of the
    /// coarse axis lands on index `k * n_out / n_in`.
    fn corners(n_in: usize, n_out: usize) -> Self {
        let r = n_in as f64 / n_out as f64;
        Self::from_src(n_in, (0..n_out).map(|o| o as f64 * r))
    }
}

/// Precomputed trilinear map from `[1, h, w, d]` to `[1, H, W, D]`.
///
/// Spatial axes use pixel-center alignment; the disparity axis uses index
/// alignment so that coarse level `k` becomes full-resolution disparity
/// `k * D / d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Upsampler {
    input: [usize; 3],
    output: [usize; 3],
    ys: Taps,
    xs: Taps,
    ds: Taps,
}

impl Upsampler {
    pub fn new(input: [usize; 3], output: [usize; 3]) -> Self {
        assert!(input.iter().chain(&output).all(|&n| n > 0), "extents must be positive");
        Upsampler {
            input,
            output,
            ys: Taps::centers(input[0], output[0]),
            xs: Taps::centers(input[1], output[1]),
            ds: Taps::corners(input[2], output[2]),
        }
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [h, w, d] = self.input;
        x.expect_shape("upsample", "volume", &[1, h, w, d])?;
        let [oh, ow, od] = self.output;
        let src = x.data();
        let mut out = Vec::with_capacity(oh * ow * od);
        for &(y0, y1, ty) in &self.ys.0 {
            for &(x0, x1, tx) in &self.xs.0 {
                for &(d0, d1, td) in &self.ds.0 {
                    let mut acc = 0.0;
                    for (yy, wy) in [(y0, 1.0 - ty), (y1, ty)] {
                        for (xx, wx) in [(x0, 1.0 - tx), (x1, tx)] {
                            let base = (yy * w + xx) * d;
                            let v = (1.0 - td) * src[base + d0].to_f64_lossy() + td * src[base + d1].to_f64_lossy();
                            acc += wy * wx * v;
                        }
                    }
                    out.push(cst(acc));
                }
            }
        }
        Tensor::from_vec(&[1, oh, ow, od], out)
    }

    pub fn backward<T: Scalar>(&self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let [oh, ow, od] = self.output;
        grad.expect_shape("upsample", "output gradient", &[1, oh, ow, od])?;
        let [h, w, d] = self.input;
        let mut gin = vec![0.0f64; h * w * d];
        let mut g = grad.data().iter();
        for &(y0, y1, ty) in &self.ys.0 {
            for &(x0, x1, tx) in &self.xs.0 {
                for &(d0, d1, td) in &self.ds.0 {
                    let gv = g.next().expect("sized above").to_f64_lossy();
                    for (yy, wy) in [(y0, 1.0 - ty), (y1, ty)] {
                        for (xx, wx) in [(x0, 1.0 - tx), (x1, tx)] {
                            let base = (yy * w + xx) * d;
                            let s = gv * wy * wx;
                            gin[base + d0] += s * (1.0 - td);
                            gin[base + d1] += s * td;
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[1, h, w, d], gin.into_iter().map(cst).collect())
    }
}
