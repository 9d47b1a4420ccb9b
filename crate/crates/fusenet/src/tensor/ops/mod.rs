//! The operation set: each function validates shapes, computes the forward
//! values, and records a backward closure onto the graph when gradients are
//! enabled.

mod concat;
mod conv;
mod linear;
mod loss;
mod norm;
mod pointwise;
mod reduce;

pub use concat::concat_axis1;
pub use conv::{conv3d, ConvParams};
pub use linear::linear;
pub use loss::{softmax_rows, weighted_cross_entropy};
pub use norm::{batchnorm3d, BatchNormState, BnMode};
pub use pointwise::{add, affine, mul, relu, sigmoid, tanh};
pub use reduce::{global_avg_pool, sum};
