//! Forward and backward kernels. Every function here is pure: inputs are
//! borrowed, outputs are fresh tensors.

mod act;
mod conv;
mod dense;
pub(crate) mod gemm;
mod loss;
mod norm;
mod pool;

pub use act::{relu, relu_backward, softmax, softmax_backward};
pub use conv::{
    conv2d, conv2d_backward, conv2d_geom, transposed_conv2d, transposed_conv2d_backward,
    transposed_conv2d_geom, ConvGeom,
};
pub use dense::{dense, dense_backward};
pub use loss::{cross_entropy, cross_entropy_backward, mse, mse_backward, LOG_EPS};
pub use norm::{
    batchnorm, batchnorm_backward, update_running, BnCache, BnStats, BN_EPS, BN_MOMENTUM,
};
pub use pool::{maxpool2d, maxpool2d_backward, unpool_nearest, unpool_nearest_backward};
