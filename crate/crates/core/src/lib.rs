pub mod data;
pub mod error;
pub mod harness;
pub mod hgfe;
pub mod householder;
pub mod hypergraph;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod saod;

pub use error::{Error, Result};
pub use numerics::Mat;
