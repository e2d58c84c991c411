//! Numeric substrate: tensors, differentiable primitives, layers and a
//! finite-difference gradient checker.

mod attention;
pub mod gradcheck;
pub mod init;
mod layers;
pub mod ops;
mod scalar;
mod tensor;

pub use attention::{AttentionCache, MultiHeadSelfAttention};
pub use layers::{LayerNorm, Linear, Mlp, MlpCache, Module, ParamSet, LN_EPS};
pub use ops::{
    cross_entropy, cross_entropy_prefix, gelu, gelu_backward, layer_norm, layer_norm_backward,
    matmul, matmul_backward, softmax, softmax_backward, CrossEntropy, LayerNormCache,
};
pub use scalar::{gemm, MatMut, MatRef, Scalar};
pub use tensor::Tensor;

pub(crate) use layers::{add_into, join};
