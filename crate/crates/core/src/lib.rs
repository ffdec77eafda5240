pub mod dataio;
pub mod encoder;
pub mod error;
pub mod evalharness;
pub mod gradsuite;
pub mod heads;
pub mod motionmask;
pub mod posenc;
pub mod tensorcore;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
