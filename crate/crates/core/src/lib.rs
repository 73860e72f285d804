//! Sparse Gaussian chain graph models with spike-and-slab LASSO priors.

pub mod cgquic;
pub mod ecm;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod path;
pub mod penalty;
pub mod psi;
pub mod sim;

pub use error::{Error, Result};
pub use model::{ChainGraphParams, Dataset, SslConfig};
