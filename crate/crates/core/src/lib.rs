pub mod analytic;
pub mod cli;
pub mod conditioning;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod evalkit;
pub mod facegen;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
