//! Toy multimodal autoregressive trainer whose image positions are
//! supervised with the projector's dynamic image embeddings.

pub mod autodiff;
pub mod checks;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod objective;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
