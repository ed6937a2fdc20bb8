//! Dense tensor kernels shared by the teachers and the students.
//!
//! All batched tensors use the `(batch, channels, height, width)` layout in
//! standard (row-major) order. Kernels that participate in student training
//! are generic over [`Real`] so gradient checks can run in `f64`.

mod act;
mod conv;
mod norm;
mod pool;
mod resize;
mod winograd;

pub use act::{relu_backward, relu_inplace, sigmoid, silu_inplace};
pub use conv::{
    conv2d, conv2d_backward, conv3x3_transformed, depthwise_conv2d, winograd_kernel, ConvGeometry,
    ConvGrads,
};
pub use norm::{BatchNorm2d, BnCache, BnGrads};
pub use pool::{
    adaptive_avg_pool2d, channel_pair_mean, global_avg_pool, max_pool2d, max_pool2d_backward,
    max_pool2d_eval, MaxPoolCache,
};
pub use resize::{resize_bilinear, resize_nearest};

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating point element type of the compute kernels.
pub trait Real: NdFloat + FromPrimitive + std::iter::Sum + Default {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits the float type")
    }
}

impl Real for f32 {}
impl Real for f64 {}
