//! Dual-domain reconstruction networks and their training.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod isb;
pub mod layers;
pub mod metrics;
pub mod mi;
pub mod model;
pub mod optim;
pub mod params;
pub mod train;

pub use error::{Error, Result};
pub use mi::{MiConfig, MiHead};
pub use model::{Arch, Forward, ModelKind, Network};
pub use params::{Bound, ParamStore};
