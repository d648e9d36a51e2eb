//! Core library: numerics, world simulators, model builders, training
//! objectives, and evaluation probes for the object-separability workbench.

pub mod error;
pub mod models;
pub mod numerics;
pub mod objectives;
pub mod probes;
pub mod util;
pub mod worlds;

pub use error::{CoreError, Result};
pub use numerics::{Array, Graph, NodeId, ParamStore};
