//! The minimal neural-network substrate: an eager autodiff tape over f64
//! arrays plus the handful of layers the two branches need.

pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod norm;
pub mod ops;
pub mod optim;
pub mod resample;

pub use graph::{Gradients, Graph, NodeId};
