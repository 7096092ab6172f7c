pub mod autodiff;
pub mod blocks;
pub mod cfa;
pub mod cli;
pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Precision, Tensor};
