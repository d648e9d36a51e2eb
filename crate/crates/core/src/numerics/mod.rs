//! Minimal dense-tensor stack: arrays, GEMM-backed kernels, a reverse-mode
//! graph, Adam, checkpoints, and a finite-difference gradient checker.

pub mod array;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod kernels;
pub mod params;

pub use array::Array;
pub use graph::{Graph, NodeId};
pub use params::{AdamConfig, ParamStore};
