//! Minimal dense-network kernel: matrices, layer forward/backward passes,
//! parameter containers, initialization and gradient checking.

pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod matrix;
pub mod params;

pub use gradcheck::{grad_check, GradCheckReport};
pub use init::{init_params, InitScheme, LayerSpec};
pub use layers::{
    dropout_backward, dropout_forward, linear_backward, linear_forward, linear_input_grad,
    linear_param_grads, relu, relu_backward, sigmoid, DropoutMask, LinearGrads, Mode,
};
pub use matrix::{gemm, MatRef, Matrix, Real};
pub use params::{ParamTensor, ParameterSet, Shape};
