pub mod advantage;
pub mod check;
pub mod envs;
pub mod error;
pub mod mmdp;
pub mod neural;
pub mod trainer;
pub mod trust_region;

pub use error::{Error, Result};
