pub mod baseline;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod linalg;
pub mod metrics;
pub mod mfpca;
pub mod pspline;
pub mod simgen;
pub mod ufpca;

pub use error::{Error, Result};
