//! Minimal dense tensor engine with reverse-mode differentiation.
//!
//! Values are `f64` row-major arrays. A [`Graph`] records primitive
//! applications over parameters borrowed from a [`ParamStore`]; calling
//! [`Graph::backward`] on a scalar node returns one gradient per parameter.
//! [`grad_check`] compares those gradients against central differences.

mod error;
pub mod gradcheck;
mod graph;
pub mod ops;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_with, GradCheckConfig, GradCheckReport, Stencil};
pub use graph::{CellGroup, Graph, NodeId};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
