use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Population mean and variance over `reduce_axes`.
///
/// Reduced axes are kept with extent 1. Accumulation runs in storage order,
/// two passes (mean first, then squared deviations).
pub fn batch_stats<T: Scalar>(x: &Tensor<T>, reduce_axes: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    if reduce_axes.is_empty() {
        return Err(Error::invalid("batch_stats", "empty reduction set"));
    }
    if let Some(&a) = reduce_axes.iter().find(|&&a| a >= x.rank()) {
        return Err(Error::invalid("batch_stats", format!("axis {a} out of range for rank {}", x.rank())));
    }
    let shape = x.shape();
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .map(|(i, &e)| if reduce_axes.contains(&i) { 1 } else { e })
        .collect();
    let out_strides = Tensor::<T>::zeros(&out_shape).strides();
    let n_out: usize = out_shape.iter().product();
    let count = T::from_usize(x.len() / n_out).expect("count fits scalar");

    // Map every flat input index to its output slot.
    let in_strides = x.strides();
    let slot = |mut flat: usize| {
        let mut o = 0;
        for ax in 0..shape.len() {
            let i = flat / in_strides[ax];
            flat %= in_strides[ax];
            if out_shape[ax] != 1 {
                o += i * out_strides[ax];
            }
        }
        o
    };

    // Shift each group by its first element so constant groups reduce to
    // exactly zero variance.
    let mut shift: Vec<Option<T>> = vec![None; n_out];
    let mut mean = vec![T::zero(); n_out];
    for (i, &v) in x.data().iter().enumerate() {
        let s = slot(i);
        let k = *shift[s].get_or_insert(v);
        mean[s] += v - k;
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![T::zero(); n_out];
    for (i, &v) in x.data().iter().enumerate() {
        let s = slot(i);
        let d = v - shift[s].expect("visited") - mean[s];
        var[s] += d * d;
    }
    var.iter_mut().for_each(|v| *v /= count);
    for (m, k) in mean.iter_mut().zip(&shift) {
        *m += k.expect("visited");
    }
    Ok((Tensor::from_vec(&out_shape, mean)?, Tensor::from_vec(&out_shape, var)?))
}

/// Softmax of the negated costs, shifted by `max(-cost)` for stability.
pub fn softmax_neg<T: Scalar>(cost: &[T]) -> Vec<T> {
    let m = cost.iter().fold(T::neg_infinity(), |m, &c| m.max(-c));
    let mut w: Vec<T> = cost.iter().map(|&c| (-c - m).exp()).collect();
    let z: T = w.iter().copied().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

/// Vector-Jacobian product of [`softmax_neg`] given its output `weights`.
pub fn softmax_neg_backward<T: Scalar>(weights: &[T], grad_out: &[T]) -> Vec<T> {
    // dw_j/dc_i = -w_j (delta_ij - w_i)
    let dot: T = weights.iter().zip(grad_out).map(|(&w, &g)| w * g).sum();
    weights.iter().zip(grad_out).map(|(&w, &g)| -w * (g - dot)).collect()
}

/// Masked mean absolute error `sum(mask * |pred - target|) / sum(mask)`.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, mask: &Tensor<T>) -> Result<T> {
    target.expect_shape("l1_loss", "target", pred.shape())?;
    mask.expect_shape("l1_loss", "mask", pred.shape())?;
    let denom = mask.sum();
    if denom <= T::zero() {
        return Err(Error::NoSupervisedPixels);
    }
    let num: T = pred
        .data()
        .iter()
        .zip(target.data())
        .zip(mask.data())
        .map(|((&p, &t), &m)| m * (p - t).abs())
        .sum();
    Ok(num / denom)
}

/// Gradient of [`l1_loss`] with respect to `pred`; zero where `pred == target`.
pub fn l1_loss_backward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    target.expect_shape("l1_loss", "target", pred.shape())?;
    mask.expect_shape("l1_loss", "mask", pred.shape())?;
    let denom = mask.sum();
    if denom <= T::zero() {
        return Err(Error::NoSupervisedPixels);
    }
    let g = pred
        .data()
        .iter()
        .zip(target.data())
        .zip(mask.data())
        .map(|((&p, &t), &m)| {
            let d = p - t;
            let s = if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            m * s / denom
        })
        .collect();
    Tensor::from_vec(pred.shape(), g)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// ReLU gradient gated on the forward output.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let g = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(y.shape(), g).expect("same shape")
}
