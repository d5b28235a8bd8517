pub mod adain;
pub mod augment;
pub mod baselines;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
