pub mod corpus;
pub mod encoder;
mod error;
pub mod evidence;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod rexmodel;

pub use error::{Error, Result};
