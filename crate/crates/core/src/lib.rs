pub mod bpe;
pub mod check;
pub mod config;
pub mod ctd;
pub mod dataset;
pub mod document;
pub mod encoder;
mod error;
pub mod eval;
pub mod example;
pub mod mesh;
pub mod model;
pub mod predict;
pub mod pubtator;
pub mod schema;
pub mod scorer;
pub mod synthetic;
pub mod train;

pub use error::{Error, ErrorKind, Result};
