pub mod dataset;
pub mod error;
pub mod pgm;
pub mod recon;
pub mod sim;

pub use error::{Error, Result};
