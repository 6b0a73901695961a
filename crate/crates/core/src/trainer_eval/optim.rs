use crate::error::{Error, Result};
use crate::layers::{Module, ParamKind};
use crate::scalar::{cst, Scalar};

pub const RMSPROP_ALPHA: f64 = 0.99;
pub const RMSPROP_EPS: f64 = 1e-8;

/// One in-place RMSProp update:
/// `s <- alpha s + (1 - alpha) g^2`, `p <- p - lr g / (sqrt(s) + eps)`.
pub fn rmsprop_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut [T], lr: T, alpha: T, eps: T) {
    assert!(params.len() == grads.len() && params.len() == state.len(), "rmsprop_step length mismatch");
    let one_minus = T::one() - alpha;
    for ((p, &g), s) in params.iter_mut().zip(grads).zip(state.iter_mut()) {
        *s = alpha * *s + one_minus * g * g;
        *p -= lr * g / (s.sqrt() + eps);
    }
}

/// RMSProp over every learnable tensor of a module, in visit order.
#[derive(Debug, Clone)]
pub struct RmsProp<T> {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    state: Vec<(String, Vec<T>)>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(lr: f64, alpha: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0) || !(0.0..1.0).contains(&alpha) || !(eps > 0.0) {
            return Err(Error::Config(format!(
                "rmsprop needs lr > 0, alpha in [0, 1), eps > 0 (got {lr}, {alpha}, {eps})"
            )));
        }
        Ok(RmsProp {
            lr,
            alpha,
            eps,
            state: Vec::new(),
        })
    }

    /// Applies accumulated gradients; tensors without a gradient buffer are
    /// treated as having zero gradient.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M) {
        let (lr, alpha, eps) = (cst::<T>(self.lr), cst::<T>(self.alpha), cst::<T>(self.eps));
        let fresh = self.state.is_empty();
        let mut k = 0;
        let state = &mut self.state;
        module.visit_mut("", &mut |name, t, kind| {
            if kind != ParamKind::Learnable {
                return;
            }
            if fresh {
                state.push((name.to_string(), vec![T::zero(); t.len()]));
            }
            let (sname, s) = &mut state[k];
            assert_eq!(sname, name, "module layout changed between optimizer steps");
            k += 1;
            let Some(g) = t.take_grad() else {
                let zeros = vec![T::zero(); t.len()];
                rmsprop_step(t.data_mut(), &zeros, s, lr, alpha, eps);
                return;
            };
            rmsprop_step(t.data_mut(), &g, s, lr, alpha, eps);
        });
    }
}
