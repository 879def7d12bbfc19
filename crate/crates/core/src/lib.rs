pub mod cli;
pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod evalmetrics;
pub mod imaging;
pub mod latent_codec;
pub mod numerics;
pub mod synthdata;

pub use error::{Error, Result};
