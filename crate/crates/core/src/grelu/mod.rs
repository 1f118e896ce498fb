//! Convex students: the two-layer gated-ReLU network in convex and factored
//! form, weight recovery and rescaling, and the masked-convolution student.

pub mod conv;
pub mod model;

pub use conv::{
    conv_forward, im2col, nonconvex_conv_params, Conv2d, ImageBatch, MaskedConvStudent,
};
pub use model::{
    assemble_one_vs_all, recover_weights, rescale_balanced, ConvexSolution, GReLUStudent,
    ZERO_BLOCK_NORM,
};
