pub mod conv;
pub mod pool;
pub(crate) mod kernel;
