pub mod buffer;
pub mod data;
pub mod diagnostics;
pub mod error;
mod fnv;
pub mod model;
pub mod netsim;
pub mod nn;
pub mod quant;
pub mod runtime;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
