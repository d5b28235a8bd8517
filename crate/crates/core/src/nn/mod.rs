//! Minimal differentiable-network toolkit: sequential networks with tap
//! points, reverse-mode gradients, losses and an SGD optimizer.

pub mod checkpoint;
mod gemm;
pub mod layer;
pub mod loss;
pub mod network;
pub mod optim;

pub use layer::{LayerSpec, PadMode};
pub use loss::{argmax_rows, cross_entropy, mse, LossGrad};
pub use network::{Forward, Gradients, Network, Upstream};
pub use optim::{Adam, AdamConfig, Sgd, SgdConfig};
pub use checkpoint::Checkpoint;
