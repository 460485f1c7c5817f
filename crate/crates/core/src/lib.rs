pub mod confounding;
pub mod data;
pub mod error;
pub mod field;
pub mod graph;
pub mod inference;
pub mod linalg;
pub mod pc_prior;
pub mod quadrature;
pub mod simulate;
pub mod structures;

pub use error::{Error, ErrorClass, Result};
