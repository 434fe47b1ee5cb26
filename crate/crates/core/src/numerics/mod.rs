//! Tensor arithmetic with reverse-mode autodiff, neural layers, the
//! Adam optimizer, and the parameter checkpoint format.

pub mod checkpoint;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use layers::{
    trunc_normal, AttnScale, Conv2d, LayerNorm, Linear, MultiHeadAttention, ParamSet,
    TransformerBlock,
};
pub use optim::{Adam, CosineSchedule};
pub use tensor::{concat, no_grad, Tensor};
