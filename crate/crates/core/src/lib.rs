pub mod autodiff;
pub mod classify;
pub mod error;
pub mod hcr;
pub mod manifest;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod vae;
pub mod volume;
pub mod workflow;

pub use error::{Error, Result};
