//! Latent diffusion: schedule, denoiser, training, and sampling.

mod model;
mod sample;
mod schedule;
mod train;
mod unet;

pub use model::{CondLatents, PreparedSample, RunConfig, TryOnModel};
pub use sample::{
    composite, initial_noise, sample_latents, sample_many, sample_tryon, TryOnRequest,
};
pub use schedule::{cfg_noise, mix, GuidanceConfig, NoiseSchedule, ScheduleConfig};
pub use train::{choose_strategy, prepare_all, prepare_sample, randn, Draw, Trainer};
pub use unet::{timestep_embedding, DenoiserNet, NetConfig};
