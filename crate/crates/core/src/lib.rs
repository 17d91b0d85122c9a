//! Radar target classification from fused target-level features and
//! cropped radar-cube blocks, with class-specific object clustering.

pub mod clustering;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod net;
pub mod pipeline;
pub mod preprocess;
pub mod sim;
pub mod tensor;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
