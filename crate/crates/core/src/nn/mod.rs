//! Minimal dense neural-network toolkit: parameter stores, a reverse-mode
//! tape, AdamW, and a finite-difference checker.

pub mod check;
mod graph;
mod optim;
mod params;

pub use graph::{sigmoid, softmax_rows, Graph, Var};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Gradients, ParamKey, ParamStore};
