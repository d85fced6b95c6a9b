//! Minimal differentiable stack: dense matrices, GATv2 message passing,
//! graph readout, SELU MLPs, reverse-mode gradients, Adam, and checkpoints.
//! Everything runs in f64 so gradient checks stay tight.

pub mod checkpoint;
mod layers;
mod model;
mod optim;
mod tensor;

pub use layers::{
    readout, readout_backward, Adjacency, GatHead, GatLayer, Linear, Mlp, ReadoutKind,
    SELU_ALPHA, SELU_LAMBDA,
};
pub use model::{ActorCritic, ForwardTrace, ModelConfig, ModelError};
pub use optim::Adam;
pub use tensor::{matmul_nn, matmul_nt, matmul_tn, Mat};
