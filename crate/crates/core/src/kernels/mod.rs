//! Differentiable operations used by the network. Every forward returns the
//! output plus a context that is consumed by exactly one backward call.

pub mod activation;
pub mod concat;
pub mod conv;
pub mod gradcheck;
pub mod norm;
pub mod pool;

pub use activation::{relu, softmax_backward, softmax_channels, softmax_channels_forward, ReluCtx, SoftmaxCtx};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward, conv2d_forward, ConvCtx, ConvGrads};
pub use gradcheck::{directional_check, finite_diff_check, relative_error, GradCheckReport};
pub use norm::{batch_norm, BatchNormConfig, BatchNormCtx, BatchNormGrads, Mode, RunningStats};
pub use pool::{max_pool_2x2, max_pool_2x2_backward, max_unpool_2x2, max_unpool_2x2_backward, PoolIndices};
