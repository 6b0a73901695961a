//! Dense tensors and the differentiable primitives built on them.

mod checkpoint;
mod conv;
mod gradcheck;
mod ops;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointEntry, CHECKPOINT_VERSION};
pub use conv::{conv2d, conv2d_backward, conv3d, conv3d_backward, ConvGrads};
pub use gradcheck::{gradient_check, GRADCHECK_EPSILON, Differentiable, GradCheckReport};
pub use ops::{batch_stats, l1_loss, l1_loss_backward, relu, relu_backward, softmax_neg, softmax_neg_backward};
pub use tensor::Tensor;
