//! Video adverse-weather restoration with a conditional diffusion denoiser
//! trained under temporally correlated noise, and online test-time
//! adaptation on tubelets cut from already restored clips.

pub mod data;
pub mod denoiser;
pub mod error;
pub mod metrics;
pub mod noise;
pub mod schedule;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod tta;

pub use error::{Error, ErrorClass, Result};
