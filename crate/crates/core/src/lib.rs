pub mod error;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Graph, NodeId, Tensor};
pub mod analysis;
pub mod baseline;
pub mod models;
pub mod synthdata;
pub mod training;
pub mod testgen;
