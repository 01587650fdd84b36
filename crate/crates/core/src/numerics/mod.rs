//! Minimal dense-tensor engine and numeric kernels.

mod conv;
pub mod grad;
pub mod io;
mod kernels;
mod scalar;
mod tensor;

pub use conv::{conv3d, conv_output_extent, depthwise_conv3d, ConvKernel3D};
pub(crate) use conv::map_extent;
pub use grad::{finite_diff_at, finite_diff_grad, forward_grad_at, relative_error, FD_EPS};
pub use kernels::{gelu, layer_norm, linear, matmul, softmax_rows, LN_EPS};
pub(crate) use kernels::{gemm, gemm_nt, softmax_in_place};
pub use scalar::{Dual, Scalar};
pub use tensor::Tensor;
