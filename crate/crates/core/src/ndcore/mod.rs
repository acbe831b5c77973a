//! Dense numeric core: matrices, activations, and reverse-mode gradients
//! through a stack of dense layers.

mod activation;
pub mod finite_diff;
mod matrix;
mod network;

pub use activation::{sigmoid, Activation};
pub use finite_diff::{central_difference, finite_diff_grad};
pub use matrix::Matrix;
pub use network::{
    affine_forward, backward, backward_masked, flatten_params, forward, predict,
    unflatten_params, Dense, GradTape, LayerGrad, ParamGrads,
};
