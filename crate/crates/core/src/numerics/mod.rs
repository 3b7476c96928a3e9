//! Minimal tensor engine with reverse-mode differentiation.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use graph::{
    conv_matrix, deconv_matrix, Activation, Gradients, Graph, Var, DEFAULT_LEAKY_SLOPE,
};
pub use params::{ParamId, ParamStore};
pub use tensor::{Tensor, TENSOR_MAGIC};
