//! Finite-difference verification of hand-written backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// An operation with an explicit vector-Jacobian product.
///
/// `backward` returns one gradient per input, same shapes as the inputs.
pub trait Differentiable {
    fn forward(&mut self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>;

    fn backward(&mut self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;
}

impl<F, B> Differentiable for (F, B)
where
    F: FnMut(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    B: FnMut(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
{
    fn forward(&mut self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        (self.0)(inputs)
    }

    fn backward(&mut self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        (self.1)(inputs, grad_out)
    }
}

/// Default central-difference step.
pub const GRADCHECK_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over every non-flagged input element.
    pub max_rel_error: f64,
    /// (input index, element index) where `max_rel_error` occurred.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Elements whose one-sided differences disagree by more than ten times
    /// the tolerance, i.e. the op is locally non-differentiable there.
    pub flagged: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients to central differences for every element
/// of every input.
///
/// The scalar objective is `sum(r * op(inputs))` with a fixed pseudo-random
/// projection `r`. Differences are formed per output element before summing,
/// so outputs untouched by a perturbation contribute exactly zero.
pub fn gradient_check<D: Differentiable + ?Sized>(
    op: &mut D,
    inputs: &[Tensor<f64>],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if epsilon <= 0.0 || tolerance <= 0.0 {
        return Err(Error::invalid("gradient_check", "epsilon and tolerance must be positive"));
    }
    let out0 = op.forward(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let proj = Tensor::uniform(out0.shape(), -1.0, 1.0, &mut rng);
    let analytic = op.backward(inputs, &proj)?;
    if analytic.len() != inputs.len() {
        return Err(Error::invalid(
            "gradient_check",
            format!("backward returned {} gradients for {} inputs", analytic.len(), inputs.len()),
        ));
    }
    for (i, (g, x)) in analytic.iter().zip(inputs).enumerate() {
        g.expect_shape("gradient_check", &format!("gradient {i}"), x.shape())?;
    }

    let diff = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .zip(proj.data())
            .map(|((&p, &m), &r)| r * (p - m))
            .sum()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        flagged: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + epsilon;
            let plus = op.forward(&work)?;
            work[i].data_mut()[j] = x - epsilon;
            let minus = op.forward(&work)?;
            work[i].data_mut()[j] = x;

            let fd = diff(&plus, &minus) / (2.0 * epsilon);
            let a = analytic[i].data()[j];
            let e = rel_err(a, fd);
            report.checked += 1;
            if e > tolerance {
                let fwd = diff(&plus, &out0) / epsilon;
                let bwd = diff(&out0, &minus) / epsilon;
                if rel_err(fwd, bwd) > 10.0 * tolerance {
                    report.flagged += 1;
                    continue;
                }
            }
            if e > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(e);
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}
