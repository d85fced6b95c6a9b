//! A self-contained reinforcement-learning autoscheduler for affine loop
//! nests over tensors.
//!
//! Programs written in a small loop-nest DSL are encoded as graphs and
//! optimized by a PPO agent that picks loop transformations from a fixed
//! 56-action catalogue, one AST branch at a time. Transformation legality is
//! decided by dependence analysis, rewards are base-4 logarithms of per-step
//! speedups, and every legality verdict and execution time is memoized
//! across trainings.

pub mod agent;
pub mod env;
pub mod memo;
pub mod featurize;
pub mod ir;
pub mod neural;
pub mod oracle;
pub mod legality;
pub mod matrix;
pub mod pretrain;
pub mod runtime;
pub mod search;
pub mod train;
pub mod transforms;
pub mod workloads;

pub use ir::{parse_program, serialize_program, Program};
