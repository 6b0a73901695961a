//! 2-D and 3-D cross-correlation with explicit reverse-mode gradients.
//!
//! Both are lowered to one im2col + GEMM kernel; a 2-D input `[C,H,W]` is the
//! 3-D case with a unit depth axis. No kernel flip is applied.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Gradients of a convolution with respect to its three operands.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    out: [usize; 3],
}

impl Geom {
    fn k(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn n_in(&self) -> usize {
        self.input.iter().product()
    }

    fn n_out(&self) -> usize {
        self.out.iter().product()
    }
}

const AXES_2D: [&str; 2] = ["height", "width"];
const AXES_3D: [&str; 3] = ["height", "width", "disparity"];

fn geometry<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
    spatial: usize,
) -> Result<Geom> {
    input.expect_rank(op, "input", spatial + 1)?;
    weight.expect_rank(op, "weights", spatial + 2)?;
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be >= 1"));
    }
    let (ishape, wshape) = (input.shape(), weight.shape());
    if wshape[1] != ishape[0] {
        return Err(Error::shape(op, "input channels", wshape[1], ishape[0]));
    }
    bias.expect_shape(op, "bias", &[wshape[0]])?;
    let names: &[&str] = if spatial == 2 { &AXES_2D } else { &AXES_3D };
    let mut g = Geom {
        cin: ishape[0],
        cout: wshape[0],
        input: [1; 3],
        kernel: [1; 3],
        stride: [1; 3],
        pad: [0; 3],
        out: [1; 3],
    };
    for ax in 0..spatial {
        let (n, k) = (ishape[ax + 1], wshape[ax + 2]);
        if k > n + 2 * pad {
            return Err(Error::shape(
                op,
                format!("kernel {} vs padded input {}", names[ax], names[ax]),
                format!("<= {}", n + 2 * pad),
                k,
            ));
        }
        g.input[ax] = n;
        g.kernel[ax] = k;
        g.stride[ax] = stride;
        g.pad[ax] = pad;
        g.out[ax] = (n + 2 * pad - k) / stride + 1;
    }
    Ok(g)
}

fn im2col<T: Scalar>(x: &[T], g: &Geom) -> Vec<T> {
    let n = g.n_out();
    let mut cols = vec![T::zero(); g.k() * n];
    let [i0n, i1n, i2n] = g.input;
    let [o0n, o1n, o2n] = g.out;
    let mut row = 0;
    for ci in 0..g.cin {
        let xc = &x[ci * g.n_in()..(ci + 1) * g.n_in()];
        for a in 0..g.kernel[0] {
            for b in 0..g.kernel[1] {
                for c in 0..g.kernel[2] {
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for o0 in 0..o0n {
                        let i0 = (o0 * g.stride[0] + a) as isize - g.pad[0] as isize;
                        if i0 < 0 || i0 >= i0n as isize {
                            continue;
                        }
                        for o1 in 0..o1n {
                            let i1 = (o1 * g.stride[1] + b) as isize - g.pad[1] as isize;
                            if i1 < 0 || i1 >= i1n as isize {
                                continue;
                            }
                            let src_base = (i0 as usize * i1n + i1 as usize) * i2n;
                            let dst_base = (o0 * o1n + o1) * o2n;
                            for o2 in 0..o2n {
                                let i2 = (o2 * g.stride[2] + c) as isize - g.pad[2] as isize;
                                if i2 >= 0 && i2 < i2n as isize {
                                    dst[dst_base + o2] = xc[src_base + i2 as usize];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &Geom, gx: &mut [T]) {
    let n = g.n_out();
    let [i0n, i1n, i2n] = g.input;
    let [o0n, o1n, o2n] = g.out;
    let mut row = 0;
    for ci in 0..g.cin {
        let gxc = &mut gx[ci * g.n_in()..(ci + 1) * g.n_in()];
        for a in 0..g.kernel[0] {
            for b in 0..g.kernel[1] {
                for c in 0..g.kernel[2] {
                    let src = &cols[row * n..(row + 1) * n];
                    for o0 in 0..o0n {
                        let i0 = (o0 * g.stride[0] + a) as isize - g.pad[0] as isize;
                        if i0 < 0 || i0 >= i0n as isize {
                            continue;
                        }
                        for o1 in 0..o1n {
                            let i1 = (o1 * g.stride[1] + b) as isize - g.pad[1] as isize;
                            if i1 < 0 || i1 >= i1n as isize {
                                continue;
                            }
                            let dst_base = (i0 as usize * i1n + i1 as usize) * i2n;
                            let src_base = (o0 * o1n + o1) * o2n;
                            for o2 in 0..o2n {
                                let i2 = (o2 * g.stride[2] + c) as isize - g.pad[2] as isize;
                                if i2 >= 0 && i2 < i2n as isize {
                                    gxc[dst_base + i2 as usize] += src[src_base + o2];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Stride-1 path: with the input zero-padded and flattened, kernel tap
/// `(a, b, c)` is a constant offset, so each output channel is a sum of
/// shifted input rows. Positions are computed over the contiguous padded
/// span covering every output; the extras are discarded.
struct Shifted {
    padded: [usize; 3],
    total: usize,
    span: usize,
    offsets: Vec<usize>,
}

impl Shifted {
    fn new(g: &Geom) -> Self {
        let p: [usize; 3] = std::array::from_fn(|ax| g.input[ax] + 2 * g.pad[ax]);
        let mut offsets = Vec::with_capacity(g.kernel.iter().product());
        for a in 0..g.kernel[0] {
            for b in 0..g.kernel[1] {
                for c in 0..g.kernel[2] {
                    offsets.push((a * p[1] + b) * p[2] + c);
                }
            }
        }
        let span = ((g.out[0] - 1) * p[1] + g.out[1] - 1) * p[2] + g.out[2];
        Shifted {
            padded: p,
            total: p.iter().product(),
            span,
            offsets,
        }
    }

    /// Calls `f(padded_index, dense_index)` for every unpadded input element.
    fn for_each_input(&self, g: &Geom, mut f: impl FnMut(usize, usize)) {
        let p = self.padded;
        let [n0, n1, n2] = g.input;
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                let dst = ((i0 + g.pad[0]) * p[1] + i1 + g.pad[1]) * p[2] + g.pad[2];
                let src = (i0 * n1 + i1) * n2;
                for i2 in 0..n2 {
                    f(dst + i2, src + i2);
                }
            }
        }
    }

    /// Calls `f(span_index, dense_index)` for every output element.
    fn for_each_output(&self, g: &Geom, mut f: impl FnMut(usize, usize)) {
        let p = self.padded;
        let [o0, o1, o2] = g.out;
        for a in 0..o0 {
            for b in 0..o1 {
                let q = (a * p[1] + b) * p[2];
                let o = (a * o1 + b) * o2;
                for c in 0..o2 {
                    f(q + c, o + c);
                }
            }
        }
    }

    fn pad<T: Scalar>(&self, x: &[T], g: &Geom) -> Vec<T> {
        let mut xp = vec![T::zero(); g.cin * self.total];
        for ci in 0..g.cin {
            let (dst, src) = (&mut xp[ci * self.total..], &x[ci * g.n_in()..]);
            self.for_each_input(g, |q, i| dst[q] = src[i]);
        }
        xp
    }
}

#[inline(always)]
fn axpy_kernel<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

#[inline(always)]
fn dot_kernel<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

// Wider vectors only; no FMA contraction, so results match the baseline bitwise.
#[cfg(target_arch = "x86_64")]
mod wide {
    use crate::scalar::Scalar;

    #[target_feature(enable = "avx2")]
    pub(super) fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
        super::axpy_kernel(y, a, x)
    }

    #[target_feature(enable = "avx2")]
    pub(super) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
        super::dot_kernel(a, b)
    }
}

fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

fn axpy<T: Scalar>(wide: bool, y: &mut [T], a: T, x: &[T]) {
    #[cfg(target_arch = "x86_64")]
    if wide {
        // SAFETY: only reached when AVX2 was detected at runtime.
        return unsafe { wide::axpy(y, a, x) };
    }
    let _ = wide;
    axpy_kernel(y, a, x)
}

fn dot<T: Scalar>(wide: bool, a: &[T], b: &[T]) -> T {
    #[cfg(target_arch = "x86_64")]
    if wide {
        // SAFETY: only reached when AVX2 was detected at runtime.
        return unsafe { wide::dot(a, b) };
    }
    let _ = wide;
    dot_kernel(a, b)
}

fn forward_shifted<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>, g: &Geom) -> Vec<T> {
    let sh = Shifted::new(g);
    let wide = has_avx2();
    let xp = sh.pad(x.data(), g);
    let (kv, l) = (sh.offsets.len(), sh.span);
    let mut row = vec![T::zero(); l];
    let mut out = vec![T::zero(); g.cout * g.n_out()];
    for co in 0..g.cout {
        row.iter_mut().for_each(|v| *v = T::zero());
        for ci in 0..g.cin {
            let xc = &xp[ci * sh.total..(ci + 1) * sh.total];
            let wk = &w.data()[(co * g.cin + ci) * kv..(co * g.cin + ci + 1) * kv];
            for (&wv, &off) in wk.iter().zip(&sh.offsets) {
                axpy(wide, &mut row, wv, &xc[off..off + l]);
            }
        }
        let (dst, b) = (&mut out[co * g.n_out()..(co + 1) * g.n_out()], bias.data()[co]);
        sh.for_each_output(g, |q, o| dst[o] = row[q] + b);
    }
    out
}

fn backward_shifted<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, gout: &Tensor<T>, g: &Geom) -> (Vec<T>, Vec<T>) {
    let sh = Shifted::new(g);
    let wide = has_avx2();
    let xp = sh.pad(x.data(), g);
    let (kv, l) = (sh.offsets.len(), sh.span);
    let mut gxp = vec![T::zero(); g.cin * sh.total];
    let mut gw = vec![T::zero(); w.len()];
    let mut grow = vec![T::zero(); l];
    for co in 0..g.cout {
        grow.iter_mut().for_each(|v| *v = T::zero());
        let src = &gout.data()[co * g.n_out()..(co + 1) * g.n_out()];
        sh.for_each_output(g, |q, o| grow[q] = src[o]);
        for ci in 0..g.cin {
            let base = (co * g.cin + ci) * kv;
            let xc = &xp[ci * sh.total..(ci + 1) * sh.total];
            let gxc = &mut gxp[ci * sh.total..(ci + 1) * sh.total];
            for (k, &off) in sh.offsets.iter().enumerate() {
                gw[base + k] = dot(wide, &grow, &xc[off..off + l]);
                axpy(wide, &mut gxc[off..off + l], w.data()[base + k], &grow);
            }
        }
    }
    let mut gx = vec![T::zero(); g.cin * g.n_in()];
    for ci in 0..g.cin {
        let (dst, src) = (&mut gx[ci * g.n_in()..], &gxp[ci * sh.total..]);
        sh.for_each_input(g, |q, i| dst[i] = src[q]);
    }
    (gx, gw)
}

impl Geom {
    fn use_shifted(&self) -> bool {
        self.stride == [1, 1, 1] && self.kernel != [1, 1, 1]
    }
}

fn forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>, g: &Geom) -> Vec<T> {
    if g.use_shifted() {
        forward_shifted(x, w, bias, g)
    } else {
        forward_gemm(x, w, bias, g)
    }
}

fn backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, gout: &Tensor<T>, g: &Geom) -> (Vec<T>, Vec<T>, Vec<T>) {
    let gbias = gout.data().chunks(g.n_out()).map(|r| r.iter().copied().sum()).collect();
    let (gx, gw) = if g.use_shifted() {
        backward_shifted(x, w, gout, g)
    } else {
        backward_gemm(x, w, gout, g)
    };
    (gx, gw, gbias)
}

fn forward_gemm<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>, g: &Geom) -> Vec<T> {
    let (k, n) = (g.k(), g.n_out());
    let mut out = Vec::with_capacity(g.cout * n);
    for &b in bias.data() {
        out.extend(std::iter::repeat_n(b, n));
    }
    let one = T::one();
    if g.kernel == [1, 1, 1] && g.stride == [1, 1, 1] && g.pad == [0, 0, 0] {
        T::gemm(g.cout, k, n, one, w.data(), (k as isize, 1), x.data(), (n as isize, 1), one, &mut out, (n as isize, 1));
    } else {
        let cols = im2col(x.data(), g);
        T::gemm(g.cout, k, n, one, w.data(), (k as isize, 1), &cols, (n as isize, 1), one, &mut out, (n as isize, 1));
    }
    out
}

fn backward_gemm<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, gout: &Tensor<T>, g: &Geom) -> (Vec<T>, Vec<T>) {
    let (k, n) = (g.k(), g.n_out());
    let (zero, one) = (T::zero(), T::one());
    let gy = gout.data();
    let pointwise = g.kernel == [1, 1, 1] && g.stride == [1, 1, 1] && g.pad == [0, 0, 0];
    let cols_owned;
    let cols: &[T] = if pointwise {
        x.data()
    } else {
        cols_owned = im2col(x.data(), g);
        &cols_owned
    };
    let mut gw = vec![zero; g.cout * k];
    // gW = gY * cols^T
    T::gemm(g.cout, n, k, one, gy, (n as isize, 1), cols, (1, n as isize), zero, &mut gw, (k as isize, 1));
    let mut gcols = vec![zero; k * n];
    // gcols = W^T * gY
    T::gemm(k, g.cout, n, one, w.data(), (1, k as isize), gy, (n as isize, 1), zero, &mut gcols, (n as isize, 1));
    let gx = if pointwise {
        gcols
    } else {
        let mut gx = vec![zero; g.cin * g.n_in()];
        col2im(&gcols, g, &mut gx);
        gx
    };
    (gx, gw)
}

fn out_shape(g: &Geom, spatial: usize) -> Vec<usize> {
    let mut s = vec![g.cout];
    s.extend_from_slice(&g.out[..spatial]);
    s
}

/// `[C_in,H,W]` * `[C_out,C_in,kH,kW]` + bias -> `[C_out,H',W']`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = geometry("conv2d", input, weights, bias, stride, pad, 2)?;
    Tensor::from_vec(&out_shape(&g, 2), forward(input, weights, bias, &g))
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let bias = Tensor::zeros(&[weights.shape()[0]]);
    let g = geometry("conv2d", input, weights, &bias, stride, pad, 2)?;
    grad_out.expect_shape("conv2d", "output gradient", &out_shape(&g, 2))?;
    let (gx, gw, gb) = backward(input, weights, grad_out, &g);
    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), gx)?,
        weight: Tensor::from_vec(weights.shape(), gw)?,
        bias: Tensor::from_vec(&[g.cout], gb)?,
    })
}

/// `[C_in,H,W,D]` * `[C_out,C_in,k,k,k]` + bias -> `[C_out,H',W',D']`.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = geometry("conv3d", input, weights, bias, stride, pad, 3)?;
    Tensor::from_vec(&out_shape(&g, 3), forward(input, weights, bias, &g))
}

pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let bias = Tensor::zeros(&[weights.shape()[0]]);
    let g = geometry("conv3d", input, weights, &bias, stride, pad, 3)?;
    grad_out.expect_shape("conv3d", "output gradient", &out_shape(&g, 3))?;
    let (gx, gw, gb) = backward(input, weights, grad_out, &g);
    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), gx)?,
        weight: Tensor::from_vec(weights.shape(), gw)?,
        bias: Tensor::from_vec(&[g.cout], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn oracle2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let ho = (h + 2 * p - kh) / s + 1;
        let wo = (wd + 2 * p - kw) / s + 1;
        let mut out = Tensor::zeros(&[co, ho, wo]);
        for o in 0..co {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for a in 0..kh {
                            for bb in 0..kw {
                                let iy = (y * s + a) as isize - p as isize;
                                let ix = (xo * s + bb) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w.at(&[o, c, a, bb]) * x.at(&[c, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    out.set(&[o, y, xo], acc);
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_center_and_corner() {
        let x = Tensor::<f64>::ones(&[1, 3, 3]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.at(&[0, 1, 1]), 9.0);
        assert_eq!(y.at(&[0, 0, 0]), 4.0);
    }

    #[test]
    fn strided_conv_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[2, 7, 6], 0.0, 1.0, &mut rng);
        let w = Tensor::randn(&[3, 2, 3, 3], 0.0, 1.0, &mut rng);
        let b = Tensor::randn(&[3], 0.0, 1.0, &mut rng);
        let y = conv2d(&x, &w, &b, 2, 1).unwrap();
        let o = oracle2d(&x, &w, &b, 2, 1);
        assert_eq!(y.shape(), o.shape());
        assert!(y.max_abs_diff(&o) < 1e-12);
    }

    #[test]
    fn oversized_kernel_names_dimension() {
        let x = Tensor::<f64>::ones(&[1, 2, 5]);
        let w = Tensor::ones(&[1, 1, 4, 3]);
        let b = Tensor::zeros(&[1]);
        let err = conv2d(&x, &w, &b, 1, 0).unwrap_err().to_string();
        assert!(err.contains("height"), "{err}");
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::<f64>::ones(&[2, 4, 4, 4]);
        let w = Tensor::ones(&[1, 3, 1, 1, 1]);
        let b = Tensor::zeros(&[1]);
        let err = conv3d(&x, &w, &b, 1, 0).unwrap_err().to_string();
        assert!(err.contains("input channels"), "{err}");
    }

    #[test]
    fn unit_kernel_conv3d_is_identity() {
        let x = Tensor::<f64>::ones(&[1, 2, 2, 2]);
        let w = Tensor::ones(&[1, 1, 1, 1, 1]);
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv3d(&x, &w, &b, 1, 0).unwrap(), x);
    }

    #[test]
    fn ones_conv3d_center() {
        let x = Tensor::<f64>::ones(&[1, 3, 3, 3]);
        let w = Tensor::ones(&[1, 1, 3, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let y = conv3d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.at(&[0, 1, 1, 1]), 27.0);
        assert_eq!(y.at(&[0, 0, 0, 0]), 8.0);
    }

    #[test]
    fn shifted_and_gemm_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (spatial, shape, k, pad) in [(2, vec![3, 5, 7], 3, 1), (2, vec![2, 6, 4], 5, 2), (3, vec![3, 4, 5, 6], 3, 1), (3, vec![2, 3, 4, 5], 3, 0)] {
            let x = Tensor::<f64>::randn(&shape, 0.0, 1.0, &mut rng);
            let mut wshape = vec![4, shape[0]];
            wshape.extend(std::iter::repeat_n(k, spatial));
            let w = Tensor::<f64>::randn(&wshape, 0.0, 1.0, &mut rng);
            let b = Tensor::<f64>::randn(&[4], 0.0, 1.0, &mut rng);
            let g = geometry("conv", &x, &w, &b, 1, pad, spatial).unwrap();
            assert!(g.use_shifted());
            let y1 = forward_shifted(&x, &w, &b, &g);
            let y2 = forward_gemm(&x, &w, &b, &g);
            let gy = Tensor::<f64>::randn(&out_shape(&g, spatial), 0.0, 1.0, &mut rng);
            let (gx1, gw1) = backward_shifted(&x, &w, &gy, &g);
            let (gx2, gw2) = backward_gemm(&x, &w, &gy, &g);
            for (a, b) in [(y1, y2), (gx1, gx2), (gw1, gw2)] {
                let d = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                assert!(d < 1e-12, "{spatial}d k{k} p{pad}: {d}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        use crate::numerics::{gradient_check, GRADCHECK_EPSILON};
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (spatial, stride) in [(2, 1), (2, 2), (3, 1)] {
                let shape: Vec<usize> = if spatial == 2 { vec![2, 5, 6] } else { vec![2, 3, 4, 5] };
                let mut wshape = vec![3, 2];
                wshape.extend(std::iter::repeat_n(3, spatial));
                let x = Tensor::<f64>::randn(&shape, 0.0, 1.0, &mut rng);
                let w = Tensor::<f64>::randn(&wshape, 0.0, 1.0, &mut rng);
                let b = Tensor::<f64>::randn(&[3], 0.0, 1.0, &mut rng);
                let fwd = |i: &[Tensor<f64>]| match spatial {
                    2 => conv2d(&i[0], &i[1], &i[2], stride, 1),
                    _ => conv3d(&i[0], &i[1], &i[2], stride, 1),
                };
                let bwd = |i: &[Tensor<f64>], g: &Tensor<f64>| {
                    let r = match spatial {
                        2 => conv2d_backward(&i[0], &i[1], stride, 1, g)?,
                        _ => conv3d_backward(&i[0], &i[1], stride, 1, g)?,
                    };
                    Ok(vec![r.input, r.weight, r.bias])
                };
                let r = gradient_check(&mut (fwd, bwd), &[x, w, b], GRADCHECK_EPSILON, 1e-5).unwrap();
                assert!(r.passed(1e-5), "seed {seed} {spatial}d stride {stride}: {r:?}");
            }
        }
    }

    #[test]
    fn wide_kernels_match_baseline_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::randn(&[1037], 0.0, 1.0, &mut rng);
        let y0 = Tensor::<f32>::randn(&[1037], 0.0, 1.0, &mut rng);
        let (mut a, mut b) = (y0.data().to_vec(), y0.data().to_vec());
        axpy(has_avx2(), &mut a, 0.37, x.data());
        axpy_kernel(&mut b, 0.37, x.data());
        assert_eq!(a, b);
        assert_eq!(dot(has_avx2(), x.data(), y0.data()).to_bits(), dot_kernel(x.data(), y0.data()).to_bits());
    }
}
